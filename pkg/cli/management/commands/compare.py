"""
数据集对比：同一个网络分别在 dataset#1 和 dataset#2 上训练，
都在 dataset#2 风格的留出样本上评估。
"""
import csv
import logging
from contextlib import closing

from rich.progress import Progress
from rich.table import Table

from cli.base import VesselSegCommand
from cli.pipeline import build_trainer, evaluate_cases, heldout_cases, training_batches
from cli.runconfig import resolve_run_config
from evaluation.reports import mean_row

logger = logging.getLogger(__name__)

VARIANTS = (1, 2)
# 留出样本固定用 dataset#2 的参数
HELDOUT_VARIANT = 2


class Command(VesselSegCommand):
    help = '分别在 dataset#1 / dataset#2 上训练，并在 dataset#2 风格的留出集上比较'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--iterations', type=int)
        parser.add_argument('--heldout', type=int, default=20, help='留出样本数')

    def flag_overrides(self, options):
        return {'iterations': options['iterations']}

    def handle(self, *args, **options):
        _, out_dir = self.resolve(options)
        config = options.get('config')
        heldout_rc = resolve_run_config(config, dict(self.overrides, variant=HELDOUT_VARIANT))
        cases = heldout_cases(heldout_rc, options['heldout'])

        rows = []
        for variant in VARIANTS:
            variant_rc = resolve_run_config(config, dict(self.overrides, variant=variant))
            variant_dir = out_dir / 'variant{}'.format(variant)
            variant_dir.mkdir(parents=True, exist_ok=True)
            variant_rc.write(variant_dir, self.command_name)

            trainer = build_trainer(variant_rc, variant_dir)
            iterations = variant_rc.training['iterations']
            with closing(training_batches(variant_rc, trainer)) as batches, \
                    Progress(console=self.console, transient=True) as progress:
                task = progress.add_task('dataset#{}'.format(variant), total=iterations)
                trainer.run(batches, iterations,
                            progress=lambda iteration, loss: progress.update(task, completed=iteration))

            reports = evaluate_cases(trainer.net, cases, heldout_rc, variant_dir / 'heldout', fundus=False)
            row = ['dataset#{}'.format(variant)] + mean_row(reports)[1:]
            logger.info('%s: Sn=%s Sp=%s Acc=%s AUC=%s', *row)
            rows.append(row)

        table = Table(title='trained on -> evaluated on dataset#2 held-out ({} samples)'.format(len(cases)))
        for column in ('trained on', 'Sn', 'Sp', 'Acc', 'AUC'):
            table.add_column(column, justify='right')
        for row in rows:
            table.add_row(*row)
        self.console.print(table)

        path = out_dir / 'compare.csv'
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['trained_on', 'Sn', 'Sp', 'Acc', 'AUC'])
            writer.writerows(rows)
        self.stdout.write(str(path))
