from rich.progress import Progress

from cli.base import VesselSegCommand
from cli.pipeline import best_case_line, evaluate_cases, load_network, report_table
from dataio.datasets import load_drive, load_stare, load_synthetic


class Command(VesselSegCommand):
    help = '在 DRIVE / STARE / 合成留出集上评估 checkpoint，输出逐图和平均指标'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--dataset', required=True, help='数据集目录')
        parser.add_argument('--kind', choices=['drive', 'stare', 'synthetic'], required=True)
        parser.add_argument('--gray', dest='gray_mode', choices=['luma', 'green'])
        parser.add_argument('--threshold', type=float)
        parser.add_argument('--roc-strategy', choices=['distinct', 'grid'])
        parser.add_argument('--full-size', action='store_true', help='镜像补边，在整幅图上评估')

    def flag_overrides(self, options):
        return {
            'gray_mode': options['gray_mode'],
            'threshold': options['threshold'],
            'roc_strategy': options['roc_strategy'],
        }

    def load_cases(self, kind, directory, evaluation):
        if kind == 'drive':
            return load_drive(directory, evaluation['gray_mode'])
        if kind == 'stare':
            return load_stare(directory, evaluation['gray_mode'],
                              evaluation['stare_fov_threshold'], evaluation['stare_fov_erosion'])
        return load_synthetic(directory)

    def handle(self, *args, **options):
        rc, out_dir = self.resolve(options)
        net = load_network(options['checkpoint'])
        cases = self.load_cases(options['kind'], options['dataset'], rc.evaluation)

        with Progress(console=self.console, transient=True) as progress:
            task = progress.add_task('evaluating', total=len(cases))
            reports = evaluate_cases(net, cases, rc, out_dir,
                                     fundus=options['kind'] != 'synthetic',
                                     full_size=options['full_size'],
                                     progress=lambda case: progress.advance(task))

        self.console.print(report_table(reports, '{} ({} images)'.format(options['kind'], len(reports))))
        self.console.print(best_case_line(reports))
        self.stdout.write(str(out_dir / 'report.csv'))
