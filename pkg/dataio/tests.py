import gzip
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from PIL import Image

from dataio.config import parse_config, read_config, render_config, write_config
from dataio.datasets import compute_fov, disk_fov, load_drive, load_stare, load_synthetic, prepare_input
from dataio.images import (
    green_channel, grayscale, invert, read_image, read_mask, save_image, save_mask, save_prob_map, to_grayscale,
)
from dataio.manifest import ManifestEntry, read_manifest, resolve, write_manifest
from evaluation.roc import auc, roc
from vesselseg.exceptions import ConfigurationError, DataError, ShapeError


def fundus_rgb(size=40, radius=15):
    """暗背景上的亮圆盘，圆盘里一条暗的横线"""
    rgb = np.zeros((size, size, 3), dtype=np.uint8)
    fov = disk_fov(size, (size / 2, size / 2), radius)
    rgb[fov] = (200, 120, 60)
    rgb[size // 2, 8:size - 8] = (90, 40, 20)
    return rgb


def vessel_mask(size=40):
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[size // 2, 8:size - 8] = 255
    return mask


class TempDirTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()


class ImageTests(TempDirTestCase):

    def test_eight_bit_round_trip(self):
        values = np.random.default_rng(0).random((12, 9))
        for name in ('a.png', 'a.pgm'):
            save_image(self.root / name, values)
            back = read_image(self.root / name)
            self.assertEqual(back.shape, (12, 9))
            self.assertLessEqual(np.max(np.abs(back - values)), 0.5 / 255 + 1e-12)

    def test_probability_maps_keep_sixteen_bits(self):
        prob = np.random.default_rng(1).random((10, 10))
        save_prob_map(self.root / 'p.png', prob)
        back = read_image(self.root / 'p.png')
        self.assertLessEqual(np.max(np.abs(back - prob)), 0.5 / 65535 + 1e-12)

    def test_sixteen_bit_maps_keep_auc(self):
        rng = np.random.default_rng(11)
        truth = rng.random((64, 64)) < 0.2
        prob = np.clip(rng.normal(0.4 + 0.2 * truth, 0.15), 0, 1)
        save_prob_map(self.root / 'auc.png', prob)
        back = read_image(self.root / 'auc.png')
        self.assertLess(abs(auc(roc(back, truth)) - auc(roc(prob, truth))), 1e-4)

    def test_values_are_clipped(self):
        save_image(self.root / 'c.png', np.array([[-0.5, 1.5]]))
        np.testing.assert_array_equal(read_image(self.root / 'c.png'), [[0.0, 1.0]])

    def test_gzip(self):
        Image.fromarray(vessel_mask(20)).save(self.root / 'm.pgm', format='PPM')
        raw = (self.root / 'm.pgm').read_bytes()
        with gzip.open(self.root / 'm.pgm.gz', 'wb') as f:
            f.write(raw)
        np.testing.assert_array_equal(read_mask(self.root / 'm.pgm.gz'), vessel_mask(20) > 0)

    def test_colour_label_becomes_binary(self):
        Image.fromarray(np.stack([vessel_mask(10)] * 3, axis=-1)).save(self.root / 'l.ppm')
        mask = read_mask(self.root / 'l.ppm')
        np.testing.assert_array_equal(mask, vessel_mask(10) > 0)

    def test_missing_and_corrupt_files(self):
        with self.assertRaises(DataError) as ctx:
            read_image(self.root / 'nope.png')
        self.assertIn('nope.png', str(ctx.exception))
        (self.root / 'bad.png').write_bytes(b'not an image')
        with self.assertRaises(DataError):
            read_image(self.root / 'bad.png')

    def test_unsupported_suffix(self):
        with self.assertRaises(DataError):
            save_image(self.root / 'x.jpg', np.zeros((2, 2)))

    def test_mask_saved_as_zero_and_one(self):
        mask = np.eye(5, dtype=bool)
        save_mask(self.root / 'm.png', mask)
        np.testing.assert_array_equal(read_mask(self.root / 'm.png'), mask)


class GrayscaleTests(SimpleTestCase):

    def test_luma_weights(self):
        rgb = np.zeros((1, 3, 3))
        rgb[0, 0, 0] = rgb[0, 1, 1] = rgb[0, 2, 2] = 1.0
        np.testing.assert_allclose(to_grayscale(rgb)[0], [0.299, 0.587, 0.114])

    def test_integer_input_is_scaled(self):
        self.assertAlmostEqual(to_grayscale(np.full((1, 1, 3), 255, dtype=np.uint8))[0, 0], 1.0)

    def test_green_and_passthrough(self):
        rgb = np.random.default_rng(2).random((4, 4, 3))
        np.testing.assert_array_equal(grayscale(rgb, 'green'), green_channel(rgb))
        np.testing.assert_array_equal(grayscale(rgb[..., 0]), rgb[..., 0])

    def test_wrong_shape(self):
        with self.assertRaises(ShapeError):
            to_grayscale(np.zeros((4, 4)))

    def test_invert(self):
        np.testing.assert_array_equal(invert(np.array([0.0, 0.25, 1.0])), [1.0, 0.75, 0.0])


class ConfigFileTests(TempDirTestCase):

    def test_parse(self):
        values = parse_config('# comment\nseed = 7\n\ngray_range = 0.5, 1.0  # trailing\n')
        self.assertEqual(values, {'seed': '7', 'gray_range': '0.5, 1.0'})

    def test_bad_lines(self):
        with self.assertRaises(ConfigurationError):
            parse_config('seed 7')
        with self.assertRaises(ConfigurationError):
            parse_config(' = 7')

    def test_rewrite_is_byte_stable(self):
        values = {'seed': 2017, 'sigma_angle': 0.1, 'gray_range': (0.5, 1.0), 'deterministic': True}
        first = write_config(self.root / 'a.cfg', values, header=['vesselseg'])
        second = write_config(self.root / 'b.cfg', read_config(first), header=['vesselseg'])
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertEqual(render_config({'flag': False}), 'flag = false\n')

    def test_missing_file(self):
        with self.assertRaises(DataError):
            read_config(self.root / 'missing.cfg')


class ManifestTests(TempDirTestCase):

    def test_round_trip_and_resolve(self):
        entries = [ManifestEntry(11, '11_img.png', '11_lbl.png', 0.0512), ManifestEntry(12, 'b.png', 'c.png', 0.1)]
        path = write_manifest(self.root / 'sub' / 'manifest.tsv', entries)
        self.assertEqual(read_manifest(path), entries)
        self.assertEqual(resolve(path, '11_img.png'), self.root / 'sub' / '11_img.png')

    def test_bad_header(self):
        (self.root / 'm.tsv').write_text('a\tb\n')
        with self.assertRaises(DataError):
            read_manifest(self.root / 'm.tsv')


class FieldOfViewTests(SimpleTestCase):

    def test_largest_bright_component(self):
        rgb = fundus_rgb()
        # 角上的亮点不属于视野
        rgb[0:2, 0:2] = 255
        fov = compute_fov(rgb, threshold=0.1, erosion=0)
        expected = disk_fov(40, (20, 20), 15)
        expected[20, 8:32] = True
        np.testing.assert_array_equal(fov, expected)
        self.assertFalse(fov[0, 0])

    def test_erosion_shrinks(self):
        rgb = fundus_rgb()
        self.assertLess(compute_fov(rgb, 0.1, 2).sum(), compute_fov(rgb, 0.1, 0).sum())

    def test_dark_image(self):
        self.assertFalse(compute_fov(np.zeros((5, 5, 3)), 0.1, 1).any())

    def test_disk(self):
        fov = disk_fov(9, (4, 4), 2)
        self.assertEqual(int(fov.sum()), 13)
        self.assertTrue(fov[4, 6])
        self.assertFalse(fov[6, 6])


class DriveTests(TempDirTestCase):

    def make_case(self, case_id, with_mask=True):
        test = self.root / 'test'
        for sub in ('images', '1st_manual', 'mask'):
            (test / sub).mkdir(parents=True, exist_ok=True)
        Image.fromarray(fundus_rgb()).save(test / 'images' / '{}_test.tif'.format(case_id))
        Image.fromarray(vessel_mask()).save(test / '1st_manual' / '{}_manual1.gif'.format(case_id))
        if with_mask:
            fov = disk_fov(40, (20, 20), 15).astype(np.uint8) * 255
            Image.fromarray(fov).save(test / 'mask' / '{}_test_mask.gif'.format(case_id))

    def test_loads_cases_in_order(self):
        self.make_case('02')
        self.make_case('01')
        cases = load_drive(self.root)
        self.assertEqual([c.id for c in cases], ['01', '02'])
        case = cases[0]
        self.assertEqual(case.image.shape, (40, 40))
        self.assertEqual(int(case.truth.sum()), 24)
        self.assertEqual(case.fov.dtype, bool)
        # 血管在原图里是暗的，反相后变亮
        inverted = prepare_input(case)
        self.assertGreater(inverted[20, 20], inverted[10, 20])
        self.assertEqual([c.id for c in load_drive(self.root / 'test')], ['01', '02'])

    def test_green_channel(self):
        self.make_case('01')
        case = load_drive(self.root, gray_mode='green')[0]
        self.assertAlmostEqual(case.image[20, 20], 40 / 255)

    def test_missing_mask_names_path(self):
        self.make_case('03', with_mask=False)
        with self.assertRaises(DataError) as ctx:
            load_drive(self.root)
        self.assertIn('03_test_mask.gif', str(ctx.exception))

    def test_empty_directory(self):
        self.assertEqual(load_drive(self.root), [])


class StareTests(TempDirTestCase):

    def test_gzipped_cases(self):
        images = self.root / 'stare-images'
        labels = self.root / 'labels-ah'
        images.mkdir()
        labels.mkdir()
        Image.fromarray(fundus_rgb()).save(images / 'im0001.ppm')
        with gzip.open(labels / 'im0001.ah.ppm.gz', 'wb') as f:
            f.write(self._ppm_bytes(np.stack([vessel_mask()] * 3, axis=-1)))
        cases = load_stare(self.root, fov_threshold=0.1, fov_erosion=0)
        self.assertEqual(len(cases), 1)
        self.assertEqual(cases[0].id, 'im0001')
        self.assertEqual(int(cases[0].truth.sum()), 24)
        self.assertTrue(cases[0].fov[20, 20])
        self.assertFalse(cases[0].fov[0, 0])

    def _ppm_bytes(self, array):
        path = self.root / 'tmp.ppm'
        Image.fromarray(array).save(path)
        return path.read_bytes()

    def test_missing_label(self):
        (self.root / 'stare-images').mkdir()
        Image.fromarray(fundus_rgb()).save(self.root / 'stare-images' / 'im0002.ppm')
        with self.assertRaises(DataError) as ctx:
            load_stare(self.root)
        self.assertIn('im0002.ah.ppm', str(ctx.exception))

    def test_empty_directory(self):
        self.assertEqual(load_stare(self.root), [])


class SyntheticDatasetTests(TempDirTestCase):

    def test_reads_generated_directory(self):
        image = np.zeros((16, 16))
        image[8, 4:12] = 0.8
        save_image(self.root / '5_img.png', image)
        save_mask(self.root / '5_lbl.png', image > 0)
        write_manifest(self.root / 'manifest.tsv', [ManifestEntry(5, '5_img.png', '5_lbl.png', 8 / 256)])
        write_config(self.root / 'resolved.cfg', {'circle_center': (8.0, 8.0), 'circle_radius': 5.0, 'line_width': 1})

        case = load_synthetic(self.root)[0]
        self.assertEqual(case.id, '5')
        np.testing.assert_array_equal(case.truth, image > 0)
        np.testing.assert_array_equal(case.fov, disk_fov(16, (8, 8), 6))
        self.assertAlmostEqual(case.image[8, 5], 0.8, places=2)

    def test_missing_sample(self):
        write_manifest(self.root / 'manifest.tsv', [ManifestEntry(5, '5_img.png', '5_lbl.png', 0.1)])
        with self.assertRaises(DataError):
            load_synthetic(self.root, fov_radius=4, center=(8, 8))

    def test_no_manifest(self):
        self.assertEqual(load_synthetic(self.root), [])
