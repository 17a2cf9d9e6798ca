import logging
from pathlib import Path

from cli.base import VesselSegCommand
from cli.pipeline import load_network, predict_map
from dataio.images import grayscale, invert, read_image, save_prob_map

logger = logging.getLogger(__name__)


class Command(VesselSegCommand):
    help = '灰度 -> 反相 -> 前向，输出 16 位概率图'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('images', nargs='+')
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--gray', dest='gray_mode', choices=['luma', 'green'])
        parser.add_argument('--full-size', action='store_true', help='镜像补边，输出和输入一样大')
        parser.add_argument('--no-invert', action='store_true', help='输入已经是亮血管（比如合成样本）')

    def flag_overrides(self, options):
        return {'gray_mode': options['gray_mode']}

    def handle(self, *args, **options):
        rc, out_dir = self.resolve(options)
        net = load_network(options['checkpoint'])
        for name in options['images']:
            path = Path(name)
            gray = grayscale(read_image(path), rc.evaluation['gray_mode'])
            x = gray if options['no_invert'] else invert(gray)
            logger.info('%s: grayscale(%s)%s', path.name, rc.evaluation['gray_mode'],
                        '' if options['no_invert'] else ' -> invert')
            prob = predict_map(net, x, options['full_size'])
            stem = path.name.split('.')[0]
            target = save_prob_map(out_dir / '{}_prob.png'.format(stem), prob)
            self.stdout.write(str(target))
