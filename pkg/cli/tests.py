import csv
import os
import subprocess
import sys
import tempfile
import unittest
from io import StringIO
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag
from PIL import Image
from scipy import ndimage

from cli.base import EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE, VesselSegCommand
from cli.runconfig import RESOLVED_NAME, parse_assignments, resolve_run_config
from dataio.config import read_config, write_config
from dataio.datasets import disk_fov
from dataio.images import read_image, read_mask
from dataio.manifest import read_manifest
from nn.checkpoint import load_checkpoint
from nn.gradcheck import ERROR_MEASURE
from vesselseg.exceptions import ConfigurationError, NumericalError

SLOW = bool(os.environ.get('VESSELSEG_SLOW'))

TINY = {
    'image_size': 32,
    'circle_center': (16, 16),
    'circle_radius': 12,
    'mean_length': 5,
    'sigma_length': 1,
    'max_nodes': 8,
    'patch_size': 8,
    'batch_size': 1,
    'checkpoint_every': 0,
    'dtype': 'float64',
    'prefetch': 0,
}


class CommandTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.config = str(write_config(self.root / 'tiny.cfg', TINY))

    def tearDown(self):
        self.tmp.cleanup()

    def run_command(self, name, *args):
        out = StringIO()
        err = StringIO()
        call_command(name, *args, stdout=out, stderr=err)
        return out.getvalue()

    def gen(self, out, *args):
        return self.run_command('gen', '--config', self.config, '--out', str(self.root / out), *args)

    def train(self, out, *args):
        self.run_command('train', '--config', self.config, '--out', str(self.root / out), *args)
        return self.root / out / 'final.ckpt'


class GenCommandTests(CommandTestCase):

    def test_writes_samples_and_manifest(self):
        stdout = self.gen('data', '--count', '3')
        manifest = self.root / 'data' / 'manifest.tsv'
        self.assertIn(str(manifest), stdout)
        entries = read_manifest(manifest)
        self.assertEqual(len(entries), 3)
        image = read_image(self.root / 'data' / entries[0].image)
        label = read_mask(self.root / 'data' / entries[0].label)
        self.assertEqual(image.shape, (32, 32))
        self.assertAlmostEqual(entries[0].label_fraction, label.mean(), places=5)
        self.assertTrue((self.root / 'data' / RESOLVED_NAME).exists())

    def test_pgm_format(self):
        self.gen('data', '--count', '1', '--format', 'pgm')
        entry = read_manifest(self.root / 'data' / 'manifest.tsv')[0]
        self.assertTrue(entry.image.endswith('_img.pgm'))

    def test_zero_count(self):
        self.gen('data', '--count', '0')
        self.assertEqual(read_manifest(self.root / 'data' / 'manifest.tsv'), [])

    def test_negative_count(self):
        with self.assertRaises(CommandError) as ctx:
            self.gen('data', '--count', '-1')
        self.assertEqual(ctx.exception.returncode, EXIT_USAGE)

    def _files(self, out):
        return {p.name: p.read_bytes() for p in (self.root / out).iterdir() if p.name != RESOLVED_NAME}

    def test_reruns_are_identical(self):
        self.gen('a', '--count', '4', '--seed', '9')
        self.gen('b', '--count', '4', '--seed', '9')
        self.assertEqual(self._files('a'), self._files('b'))

    def test_separate_processes_are_identical(self):
        for out in ('p1', 'p2'):
            subprocess.run(
                [sys.executable, str(settings.BASE_DIR / 'manage.py'), 'gen', '--config', self.config,
                 '--out', str(self.root / out), '--count', '3', '--seed', '9'],
                cwd=settings.BASE_DIR, check=True, capture_output=True,
            )
        self.assertEqual(len(self._files('p1')), 7)
        self.assertEqual(self._files('p1'), self._files('p2'))
        self.assertEqual((self.root / 'a' / RESOLVED_NAME).read_bytes(),
                         (self.root / 'b' / RESOLVED_NAME).read_bytes())

    def test_thread_count_does_not_change_output(self):
        self.gen('one', '--count', '6', '--threads', '1')
        self.gen('four', '--count', '6', '--threads', '4')
        self.assertEqual(self._files('one'), self._files('four'))

    def test_variant_one_has_thicker_vessels(self):
        thickness = {}
        for variant in ('1', '2'):
            out = 'v' + variant
            self.gen(out, '--count', '10', '--variant', variant)
            values = []
            for entry in read_manifest(self.root / out / 'manifest.tsv'):
                label = read_mask(self.root / out / entry.label)
                values.extend(ndimage.distance_transform_edt(label)[label])
            thickness[variant] = np.mean(values)
        self.assertGreater(thickness['1'], thickness['2'])

    def test_unknown_key_is_a_configuration_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.gen('data', '--count', '1', '--set', 'colour=red')
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)
        self.assertIn('colour', str(ctx.exception))

    def test_invalid_choice_is_a_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.gen('data', '--variant', '3')
        self.assertEqual(ctx.exception.returncode, EXIT_USAGE)

    def test_missing_out_is_a_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('gen', '--count', '1', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, EXIT_USAGE)


class RunConfigTests(CommandTestCase):

    def test_precedence(self):
        write_config(self.root / 'file.cfg', {'mean_length': 7.0, 'line_width': 2})
        rc = resolve_run_config(str(self.root / 'file.cfg'), {'variant': 1, 'mean_length': '9', 'seed': None})
        self.assertEqual(rc.generator.mean_length, 9.0)
        self.assertEqual(rc.generator.line_width, 2)
        self.assertEqual(resolve_run_config(None, {'variant': 1}).generator.line_width, 3)
        self.assertEqual(resolve_run_config().variant, 2)

    def test_noise_shares_the_seed(self):
        rc = resolve_run_config(None, {'seed': '31'})
        self.assertEqual(rc.seed, 31)
        self.assertEqual(rc.noise.seed, 31)

    def test_resolved_file_is_stable(self):
        rc = resolve_run_config(self.config, {'seed': '5'})
        first = rc.write(self.root / 'a', 'gen')
        second = resolve_run_config(str(first)).write(self.root / 'b', 'gen')
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertTrue(first.read_text().startswith('# vesselseg '))

    def test_invalid_values(self):
        with self.assertRaises(ConfigurationError):
            resolve_run_config(None, {'lr': '-1'})
        with self.assertRaises(ConfigurationError):
            resolve_run_config(None, {'network': str(self.root / 'missing.json')})

    def test_parse_assignments(self):
        self.assertEqual(parse_assignments(['a=1', ' b = x=y ']), {'a': '1', 'b': 'x=y'})
        with self.assertRaises(ConfigurationError):
            parse_assignments(['novalue'])


class GradcheckCommandTests(CommandTestCase):

    def test_all_checks_pass(self):
        stdout = self.run_command('gradcheck')
        self.assertIn('all 9 checks passed', stdout)
        self.assertIn('softmax_ce', stdout)
        self.assertIn(ERROR_MEASURE, stdout)


class FailingCommand(VesselSegCommand):
    uses_run_config = False

    def handle(self, *args, **options):
        raise NumericalError('Loss became nan at iteration 4', iteration=4, norms=[('0:conv', 1.5)])


class ExitCodeTests(SimpleTestCase):

    def test_numerical_error_exits_with_three(self):
        err = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command(FailingCommand(), stdout=StringIO(), stderr=err)
        self.assertEqual(ctx.exception.returncode, EXIT_NUMERICAL)
        self.assertIn('iteration: 4', err.getvalue())
        self.assertIn('0:conv', err.getvalue())


class TrainCommandTests(CommandTestCase):

    def test_writes_checkpoints_and_loss_curve(self):
        final = self.train('run', '--iterations', '4', '--checkpoint-every', '2')
        self.assertTrue(final.exists())
        self.assertTrue((self.root / 'run' / 'checkpoint_0000002.ckpt').exists())
        self.assertTrue((self.root / 'run' / 'checkpoint_0000004.ckpt').exists())
        lines = (self.root / 'run' / 'loss.csv').read_text().splitlines()
        self.assertEqual(lines[0], 'iteration,loss')
        self.assertEqual(len(lines), 5)
        self.assertEqual(load_checkpoint(final).iteration, 4)
        self.assertIn('iterations = 4', (self.root / 'run' / RESOLVED_NAME).read_text())

    def test_resume_is_bitwise_identical(self):
        straight = self.train('a', '--iterations', '4')
        self.train('b', '--iterations', '2')
        resumed = self.train('b', '--iterations', '4', '--resume', str(self.root / 'b' / 'final.ckpt'))
        self.assertEqual(straight.read_bytes(), resumed.read_bytes())

    def test_manifest_source(self):
        self.gen('data', '--count', '3')
        final = self.train('run', '--iterations', '2', '--source', 'manifest',
                           '--manifest', str(self.root / 'data' / 'manifest.tsv'))
        self.assertEqual(load_checkpoint(final).iteration, 2)

    def test_manifest_source_needs_a_manifest(self):
        with self.assertRaises(CommandError) as ctx:
            self.train('run', '--source', 'manifest')
        self.assertEqual(ctx.exception.returncode, EXIT_USAGE)

    def test_missing_manifest_is_a_data_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.train('run', '--iterations', '1', '--source', 'manifest', '--manifest', str(self.root / 'no.tsv'))
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)


class PredictAndEvalCommandTests(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.checkpoint = self.train('run', '--iterations', '2')
        self.gen('data', '--count', '2')

    def test_predict_sizes(self):
        entry = read_manifest(self.root / 'data' / 'manifest.tsv')[0]
        image = str(self.root / 'data' / entry.image)
        common = ('--checkpoint', str(self.checkpoint), '--config', self.config, '--no-invert')
        stdout = self.run_command('predict', image, *common, '--out', str(self.root / 'p'))
        target = self.root / 'p' / '{}_img_prob.png'.format(entry.seed)
        self.assertIn(str(target), stdout)
        self.assertEqual(read_image(target).shape, (22, 22))

        self.run_command('predict', image, *common, '--full-size', '--out', str(self.root / 'full'))
        self.assertEqual(read_image(self.root / 'full' / '{}_img_prob.png'.format(entry.seed)).shape, (32, 32))

    def test_predict_missing_checkpoint(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('predict', 'x.png', '--checkpoint', str(self.root / 'no.ckpt'),
                             '--out', str(self.root / 'p'))
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)

    def test_eval_synthetic(self):
        stdout = self.run_command('eval', '--checkpoint', str(self.checkpoint), '--dataset', str(self.root / 'data'),
                                  '--kind', 'synthetic', '--config', self.config, '--out', str(self.root / 'ev'))
        report = self.root / 'ev' / 'report.csv'
        self.assertIn(str(report), stdout)
        self.assertIn('best case', stdout)
        with open(report, newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['image_id', 'Sn', 'Sp', 'Acc', 'AUC'])
        self.assertEqual(len(rows), 4)
        self.assertEqual(rows[-1][0], 'mean')
        self.assertEqual(len(list((self.root / 'ev' / 'prob').iterdir())), 2)
        self.assertEqual(len(list((self.root / 'ev' / 'roc').iterdir())), 2)

    def test_eval_drive_layout(self):
        test = self.root / 'drive' / 'test'
        for sub in ('images', '1st_manual', 'mask'):
            (test / sub).mkdir(parents=True)
        rgb = np.zeros((40, 40, 3), dtype=np.uint8)
        fov = disk_fov(40, (20, 20), 15)
        rgb[fov] = (200, 120, 60)
        rgb[20, 8:32] = (90, 40, 20)
        truth = np.zeros((40, 40), dtype=np.uint8)
        truth[20, 8:32] = 255
        Image.fromarray(rgb).save(test / 'images' / '01_test.tif')
        Image.fromarray(truth).save(test / '1st_manual' / '01_manual1.gif')
        Image.fromarray(fov.astype(np.uint8) * 255).save(test / 'mask' / '01_test_mask.gif')

        self.run_command('eval', '--checkpoint', str(self.checkpoint), '--dataset', str(self.root / 'drive'),
                         '--kind', 'drive', '--out', str(self.root / 'ev'))
        self.assertEqual(read_image(self.root / 'ev' / 'prob' / '01_prob.png').shape, (30, 30))
        self.assertIn('01', (self.root / 'ev' / 'report.csv').read_text())

    def test_eval_missing_label_is_a_data_error(self):
        images = self.root / 'drive' / 'test' / 'images'
        images.mkdir(parents=True)
        Image.fromarray(np.zeros((20, 20, 3), dtype=np.uint8)).save(images / '07_test.tif')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('eval', '--checkpoint', str(self.checkpoint), '--dataset', str(self.root / 'drive'),
                             '--kind', 'drive', '--out', str(self.root / 'ev'))
        self.assertEqual(ctx.exception.returncode, EXIT_DATA)
        self.assertIn('07_manual1.gif', str(ctx.exception))


class CompareCommandTests(CommandTestCase):

    def test_trains_both_variants(self):
        out = self.root / 'cmp'
        self.run_command('compare', '--config', self.config, '--out', str(out), '--iterations', '2', '--heldout', '2')
        with open(out / 'compare.csv', newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['trained_on', 'Sn', 'Sp', 'Acc', 'AUC'])
        self.assertEqual([r[0] for r in rows[1:]], ['dataset#1', 'dataset#2'])
        for variant in (1, 2):
            resolved = read_config(out / 'variant{}'.format(variant) / RESOLVED_NAME)
            self.assertEqual(resolved['variant'], str(variant))
            self.assertTrue((out / 'variant{}'.format(variant) / 'final.ckpt').exists())
            self.assertTrue((out / 'variant{}'.format(variant) / 'heldout' / 'report.csv').exists())


@tag('slow')
@unittest.skipUnless(SLOW, 'set VESSELSEG_SLOW=1 to run')
class DatasetContrastTests(SimpleTestCase):
    """同样的网络和迭代次数，dataset#2 训练出来的模型在 dataset#2 留出集上 AUC 更高"""

    def test_dataset2_training_wins(self):
        with tempfile.TemporaryDirectory() as tmp:
            call_command('compare', '--out', tmp, '--heldout', '20', stdout=StringIO(), stderr=StringIO())
            with open(Path(tmp) / 'compare.csv', newline='') as f:
                rows = {row['trained_on']: float(row['AUC']) for row in csv.DictReader(f)}
        self.assertGreater(rows['dataset#2'], rows['dataset#1'])
