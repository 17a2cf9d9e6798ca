import math
import os
import unittest

import numpy as np
from django.test import SimpleTestCase, tag
from scipy import ndimage

from synthgen.config import build_generator_config
from synthgen.generator import (
    bresenham, gen_point, generate_raw, in_circle, normalize_angle, rasterize_segment, sample_branch_angle,
)
from vesselseg.exceptions import ConfigurationError, GenerationError
from vesselseg.seeding import derive_seed

SLOW = bool(os.environ.get('VESSELSEG_SLOW'))


def _labeled_radius(sample, center):
    ys, xs = np.nonzero(sample.label)
    return np.hypot(xs - center[0], ys - center[1]).max()


class GeneratorConfigTests(SimpleTestCase):

    def test_defaults_are_valid_for_both_variants(self):
        first = build_generator_config(1)
        second = build_generator_config(2)
        self.assertEqual(first.line_width, 3)
        self.assertEqual(second.line_width, 1)
        self.assertGreater(first.gray_range[0], second.gray_range[0])

    def test_branch_angle_must_be_inside_open_interval(self):
        with self.assertRaises(ConfigurationError) as ctx:
            build_generator_config(branch_angle=math.pi)
        self.assertIn('branch_angle', ctx.exception.detail)

    def test_gray_range_bounds(self):
        for bad in ([0.0, 0.5], [0.7, 0.6], [0.5, 1.2]):
            with self.assertRaises(ConfigurationError):
                build_generator_config(gray_range=bad)

    def test_circle_must_fit_inside_image(self):
        with self.assertRaises(ConfigurationError):
            build_generator_config(circle_center=[10, 64], circle_radius=40)
        with self.assertRaises(ConfigurationError):
            build_generator_config(circle_radius=65)

    def test_range_strings_are_parsed(self):
        config = build_generator_config(gray_range='0.4, 0.9', circle_center='60, 62')
        self.assertEqual(config.gray_range, (0.4, 0.9))
        self.assertEqual(config.circle_center, (60.0, 62.0))


class GeometryTests(SimpleTestCase):

    def test_in_circle_is_a_closed_disk(self):
        self.assertTrue(in_circle((5, 5), (5, 5), 3))
        self.assertTrue(in_circle((8, 5), (5, 5), 3))
        self.assertFalse(in_circle((9, 5), (5, 5), 3))

    def test_gen_point(self):
        self.assertEqual(gen_point((100, 100), 0.0, 10), (110, 100))
        # y 轴向下
        self.assertEqual(gen_point((100, 100), math.pi / 2, 10), (100, 110))
        self.assertEqual(gen_point((0, 0), math.pi / 4, math.sqrt(2)), (1, 1))

    def test_normalize_angle_range(self):
        self.assertEqual(normalize_angle(math.pi), math.pi)
        self.assertAlmostEqual(normalize_angle(-math.pi), math.pi)
        self.assertAlmostEqual(normalize_angle(3 * math.pi / 2), -math.pi / 2)

    def test_branch_angle_without_noise(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            self.assertIn(sample_branch_angle(0.0, 0.5, 0.0, rng), (0.5, -0.5))

    def test_branch_sign_is_a_fair_coin(self):
        rng = np.random.default_rng(11)
        draws = np.array([sample_branch_angle(0.0, 0.5, 0.0, rng) for _ in range(10000)])
        self.assertTrue(0.45 <= np.mean(draws > 0) <= 0.55)

    def test_branch_angle_wraps(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            angle = sample_branch_angle(math.pi - 0.01, 0.5, 0.3, rng)
            self.assertTrue(-math.pi < angle <= math.pi)

    def test_bresenham_endpoints(self):
        points = bresenham((2, 3), (9, 6))
        self.assertEqual(points[0], (2, 3))
        self.assertEqual(points[-1], (9, 6))
        self.assertEqual(len(points), 8)


class RasterizeTests(SimpleTestCase):

    def setUp(self):
        self.image = np.zeros((32, 32))
        self.label = np.zeros((32, 32), dtype=np.uint8)

    def test_horizontal_segment_pixel_count(self):
        rasterize_segment(self.image, self.label, (10, 10), (20, 10), 0.8, 1)
        self.assertEqual(int(np.count_nonzero(self.image == 0.8)), 11)
        self.assertEqual(int(self.label.sum()), 11)
        self.assertTrue(np.all(self.label[10, 10:21] == 1))

    def test_width_stamps_a_square(self):
        rasterize_segment(self.image, self.label, (10, 10), (20, 10), 0.8, 3)
        self.assertEqual(int(self.label.sum()), 11 * 3 + 2 * 3)

    def test_segment_outside_is_clipped(self):
        rasterize_segment(self.image, self.label, (40, 40), (60, 45), 0.5, 3)
        self.assertFalse(self.image.any())
        self.assertFalse(self.label.any())

    def test_last_writer_wins(self):
        rasterize_segment(self.image, self.label, (5, 15), (25, 15), 0.3, 1)
        rasterize_segment(self.image, self.label, (15, 5), (15, 25), 0.9, 1)
        self.assertEqual(self.image[15, 15], 0.9)


class GenerateRawTests(SimpleTestCase):

    def test_single_segment_without_variance(self):
        config = build_generator_config(max_nodes=1, max_children=1, sigma_length=0, sigma_angle=0)
        sample = generate_raw(config, 7)
        tree = sample.tree
        self.assertEqual(len(tree.edges), 1)
        self.assertEqual(tree.edges[0].length, config.mean_length)
        turn = normalize_angle(tree.nodes[1].direction - tree.nodes[0].direction)
        self.assertTrue(math.isclose(abs(turn), config.branch_angle, abs_tol=1e-12))
        start, end = tree.nodes[0].position, tree.nodes[1].position
        self.assertLessEqual(abs(math.dist(start, end) - config.mean_length), 1.0)

    def test_same_seed_same_bytes(self):
        config = build_generator_config(2)
        first = generate_raw(config, 42)
        second = generate_raw(config, 42)
        self.assertEqual(first.image.tobytes(), second.image.tobytes())
        self.assertEqual(first.label.tobytes(), second.label.tobytes())

    def test_different_seeds_differ(self):
        config = build_generator_config(2)
        self.assertFalse(np.array_equal(generate_raw(config, 1).label, generate_raw(config, 2).label))

    def test_degenerate_geometry_names_parameter(self):
        config = build_generator_config(image_size=32, circle_center=[16, 16], circle_radius=4,
                                        mean_length=30, sigma_length=0)
        with self.assertRaises(GenerationError) as ctx:
            generate_raw(config, 1)
        self.assertEqual(ctx.exception.parameter, 'mean_length')

    def _check_geometry(self, config, count):
        center = config.circle_center
        structure = np.ones((3, 3), dtype=bool)
        for i in range(count):
            sample = generate_raw(config, derive_seed(config.seed, i))
            tree = sample.tree
            self.assertLessEqual(tree.node_count, config.max_nodes)
            self.assertLessEqual(max(tree.children_counts()), config.max_children)
            for node in tree.nodes:
                self.assertTrue(in_circle(node.position, center, config.circle_radius))
            for edge in tree.edges:
                self.assertLess(edge.parent, len(tree.nodes))
            self.assertLessEqual(_labeled_radius(sample, center), config.circle_radius + config.line_width)
            # 原始样本：图像非零 <=> 标签为 1
            np.testing.assert_array_equal(sample.image > 0, sample.label == 1)
            if config.max_nodes > 1:
                dilated = ndimage.binary_dilation(sample.label.astype(bool))
                _, components = ndimage.label(dilated, structure=structure)
                self.assertEqual(components, 1)

    def test_geometry_properties(self):
        for variant in (1, 2):
            self._check_geometry(build_generator_config(variant), 100)

    @tag('slow')
    @unittest.skipUnless(SLOW, 'set VESSELSEG_SLOW=1 to run')
    def test_geometry_properties_full(self):
        for variant in (1, 2):
            self._check_geometry(build_generator_config(variant), 1000)

    def _length_mean_within_bound(self, count):
        # 画布足够大，边界拒绝几乎不会发生，不会让长度分布有偏
        config = build_generator_config(image_size=320, circle_center=[160, 160], circle_radius=150,
                                        max_nodes=40, max_children=3)
        lengths = []
        for i in range(count):
            lengths.extend(generate_raw(config, derive_seed(99, i)).tree.lengths())
        bound = 3 * config.sigma_length / math.sqrt(len(lengths))
        self.assertLess(abs(np.mean(lengths) - config.mean_length), bound)

    def test_segment_lengths_follow_normal_mean(self):
        self._length_mean_within_bound(100)

    @tag('slow')
    @unittest.skipUnless(SLOW, 'set VESSELSEG_SLOW=1 to run')
    def test_segment_lengths_follow_normal_mean_full(self):
        self._length_mean_within_bound(1000)
