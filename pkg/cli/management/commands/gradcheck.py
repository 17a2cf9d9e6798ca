from django.core.management.base import CommandError
from rich.table import Table

from cli.base import EXIT_NUMERICAL, VesselSegCommand
from nn.gradcheck import ERROR_MEASURE, run_all


class Command(VesselSegCommand):
    help = '对每一层做有限差分梯度检查，有任何一项失败就以 3 退出'
    uses_run_config = False

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **options):
        results = run_all(options['seed'])
        table = Table(title='gradient check (float64, eps=1e-4)')
        table.add_column('layer')
        table.add_column('max rel. error', justify='right')
        table.add_column('tolerance', justify='right')
        table.add_column('result')
        for result in results:
            table.add_row(result.name, '{:.3e}'.format(result.error), '{:.0e}'.format(result.tolerance),
                          '[green]pass[/green]' if result.passed else '[red]FAIL[/red]')
        self.stdout.write(ERROR_MEASURE)
        self.console.print(table)

        failed = [r.name for r in results if not r.passed]
        if failed:
            raise CommandError('Gradient check failed: {}'.format(', '.join(failed)), returncode=EXIT_NUMERICAL)
        self.stdout.write('all {} checks passed'.format(len(results)))
