from contextlib import closing

from django.core.management.base import CommandError
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeRemainingColumn

from cli.base import EXIT_USAGE, VesselSegCommand
from cli.pipeline import build_trainer, training_batches


class Command(VesselSegCommand):
    help = '训练分割网络，默认边生成边训练'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--variant', type=int, choices=[1, 2])
        parser.add_argument('--source', choices=['synthetic', 'manifest'], default='synthetic')
        parser.add_argument('--manifest', help='--source manifest 时的样本清单')
        parser.add_argument('--iterations', type=int)
        parser.add_argument('--batch-size', type=int)
        parser.add_argument('--lr', type=float)
        parser.add_argument('--momentum', type=float)
        parser.add_argument('--checkpoint-every', type=int)
        parser.add_argument('--dtype', choices=['float32', 'float64'])
        parser.add_argument('--network', help='网络结构 JSON 文件')
        parser.add_argument('--resume', help='从这个 checkpoint 继续训练')

    def flag_overrides(self, options):
        return {
            'variant': options['variant'],
            'iterations': options['iterations'],
            'batch_size': options['batch_size'],
            'lr': options['lr'],
            'momentum': options['momentum'],
            'checkpoint_every': options['checkpoint_every'],
            'dtype': options['dtype'],
            'network': options['network'],
        }

    def handle(self, *args, **options):
        if options['source'] == 'manifest' and not options['manifest']:
            raise CommandError('--source manifest requires --manifest', returncode=EXIT_USAGE)
        rc, out_dir = self.resolve(options)
        trainer = build_trainer(rc, out_dir, resume=options['resume'])
        iterations = rc.training['iterations']
        columns = [TextColumn('[progress.description]{task.description}'), BarColumn(),
                   MofNCompleteColumn(), TextColumn('loss {task.fields[loss]}'), TimeRemainingColumn()]
        with closing(training_batches(rc, trainer, options['source'], options['manifest'])) as batches, \
                Progress(*columns, console=self.console, transient=True) as progress:
            task = progress.add_task('training', total=iterations, completed=trainer.iteration, loss='-')

            def update(iteration, loss):
                progress.update(task, completed=iteration, loss='{:.5f}'.format(loss))

            final = trainer.run(batches, iterations, progress=update)

        self.stdout.write(str(final))
