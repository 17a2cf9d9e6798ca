import logging
from concurrent.futures import ThreadPoolExecutor

from django.core.management.base import CommandError
from rich.progress import Progress

from cli.base import EXIT_USAGE, VesselSegCommand
from dataio.images import save_image, save_mask
from dataio.manifest import ManifestEntry, write_manifest
from noisegen.noise import make_sample
from vesselseg.seeding import derive_seed

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.tsv'


class Command(VesselSegCommand):
    help = '生成合成训练样本（图像 + 标签）和样本清单'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--count', type=int, default=100)
        parser.add_argument('--variant', type=int, choices=[1, 2])
        parser.add_argument('--format', dest='image_format', choices=['png', 'pgm'])

    def flag_overrides(self, options):
        return {'variant': options['variant'], 'image_format': options['image_format']}

    def handle(self, *args, **options):
        count = options['count']
        if count < 0:
            raise CommandError('--count must be >= 0', returncode=EXIT_USAGE)
        rc, out_dir = self.resolve(options)
        suffix = rc.run['image_format']
        threads = 1 if rc.run['deterministic'] else rc.run['threads']

        def produce(index):
            seed = derive_seed(rc.seed, index)
            sample = make_sample(rc.generator, rc.noise, seed)
            image_name = '{}_img.{}'.format(seed, suffix)
            label_name = '{}_lbl.{}'.format(seed, suffix)
            save_image(out_dir / image_name, sample.image)
            save_mask(out_dir / label_name, sample.label)
            return ManifestEntry(seed, image_name, label_name, sample.label_fraction)

        entries = []
        with Progress(console=self.console, transient=True) as progress:
            task = progress.add_task('generating variant {}'.format(rc.variant), total=count)
            # map 按下标顺序返回结果，清单顺序和线程数无关
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for entry in pool.map(produce, range(count)):
                    entries.append(entry)
                    progress.advance(task)

        manifest = write_manifest(out_dir / MANIFEST_NAME, entries)
        logger.info('%d samples written to %s', len(entries), out_dir)
        self.stdout.write(str(manifest))
