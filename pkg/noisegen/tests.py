import math

import numpy as np
from django.test import SimpleTestCase

from noisegen.config import build_noise_config
from noisegen.noise import (
    Patch, add_global_noise, add_local_sine, iter_samples, make_sample, select_patches, sine_field,
)
from synthgen.config import build_generator_config
from synthgen.generator import generate_raw
from vesselseg.exceptions import ConfigurationError
from vesselseg.seeding import derive_seed

SILENT = {'noise_mean': 0, 'noise_sigma': 0, 'amplitude': 0, 'bias_range': [0, 0]}


class NoiseConfigTests(SimpleTestCase):

    def test_variants_differ(self):
        first = build_noise_config(1)
        second = build_noise_config(2)
        self.assertGreater(second.noise_sigma, first.noise_sigma)
        self.assertGreater(second.amplitude, first.amplitude)
        self.assertEqual(second.max_patches, 5)

    def test_invalid_values(self):
        with self.assertRaises(ConfigurationError):
            build_noise_config(2, frequency=0)
        with self.assertRaises(ConfigurationError):
            build_noise_config(2, noise_sigma=-0.1)
        with self.assertRaises(ConfigurationError):
            build_noise_config(2, bias_range=[0.3, 0.1])

    def test_patch_must_fit_image(self):
        with self.assertRaises(ConfigurationError):
            build_noise_config(2, image_size=32, patch_size=48)


class GlobalNoiseTests(SimpleTestCase):

    def test_zero_noise_is_identity(self):
        cfg = build_noise_config(2, **SILENT)
        image = np.random.default_rng(0).random((64, 64))
        out = add_global_noise(image, cfg, np.random.default_rng(1))
        np.testing.assert_array_equal(out, image)

    def test_deterministic_shift(self):
        cfg = build_noise_config(2, noise_mean=0.1, noise_sigma=0, bias_range=[0.05, 0.05])
        image = np.full((16, 16), 0.5)
        image[0, 0] = 0.95
        out = add_global_noise(image, cfg, np.random.default_rng(1))
        self.assertTrue(np.allclose(out[1:, 1:], 0.65, atol=1e-12))
        self.assertEqual(out[0, 0], 1.0)

    def test_noise_mean(self):
        # 偏置取固定值，避免截断影响均值
        cfg = build_noise_config(2, noise_mean=0.1, noise_sigma=0.05, bias_range=[0.3, 0.3])
        out = add_global_noise(np.zeros((128, 128)), cfg, np.random.default_rng(8))
        self.assertLess(abs(out.mean() - 0.4), 4 * 0.05 / 128)

    def test_output_is_clipped(self):
        cfg = build_noise_config(2, noise_sigma=0.5)
        out = add_global_noise(np.random.default_rng(2).random((64, 64)), cfg, np.random.default_rng(3))
        self.assertGreaterEqual(out.min(), 0.0)
        self.assertLessEqual(out.max(), 1.0)


class PatchTests(SimpleTestCase):

    def test_n_max_one_gives_no_patches(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            self.assertEqual(select_patches(rng, 128, 48, 1), [])

    def test_full_frame_patches(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            self.assertLessEqual(len(select_patches(rng, 64, 64, 5)), 1)

    def test_patches_are_disjoint_and_inside(self):
        rng = np.random.default_rng(1)
        for _ in range(10000):
            patches = select_patches(rng, 128, 48, 5)
            self.assertLess(len(patches), 5)
            for i, a in enumerate(patches):
                self.assertTrue(0 <= a.top and a.top + a.size <= 128)
                self.assertTrue(0 <= a.left and a.left + a.size <= 128)
                for b in patches[i + 1:]:
                    mask_a = np.zeros((128, 128), dtype=bool)
                    mask_b = np.zeros((128, 128), dtype=bool)
                    mask_a[a.slices()] = True
                    mask_b[b.slices()] = True
                    self.assertFalse((mask_a & mask_b).any())


class LocalSineTests(SimpleTestCase):

    def test_zero_amplitude_is_identity(self):
        cfg = build_noise_config(2, amplitude=0)
        image = np.random.default_rng(0).random((64, 64))
        out = add_local_sine(image, [Patch(4, 4, 32)], cfg, np.random.default_rng(1))
        np.testing.assert_array_equal(out, image)

    def test_patch_origin_with_zero_phase(self):
        cfg = build_noise_config(2)
        image = np.full((64, 64), 0.5)
        out = add_local_sine(image, [Patch(10, 20, 32)], cfg, np.random.default_rng(1), phase=0.0)
        self.assertEqual(out[10, 20], 0.5)
        # 方块外不变
        self.assertEqual(out[0, 0], 0.5)
        self.assertFalse(np.array_equal(out[10:42, 20:52], image[10:42, 20:52]))

    def test_diagonal_oscillates(self):
        amplitude = 0.15
        field = sine_field(32, 2 * math.pi / 16, amplitude, 0.0)
        diagonal = np.diag(field)
        # 两个完整周期至少 4 次过零，第 0 个点正好是 0，跳过
        signs = np.sign(diagonal[1:])
        self.assertGreaterEqual(int(np.count_nonzero(signs[1:] != signs[:-1])), 4)
        self.assertGreater(diagonal.max() - diagonal.min(), 1.9 * amplitude)


class MakeSampleTests(SimpleTestCase):

    def setUp(self):
        self.gen = build_generator_config(2)
        self.noise = build_noise_config(2, image_size=self.gen.image_size)

    def test_silent_noise_gives_raw_image(self):
        silent = build_noise_config(2, **SILENT)
        raw = generate_raw(self.gen, 5)
        sample = make_sample(self.gen, silent, 5)
        np.testing.assert_array_equal(sample.image, raw.image)

    def test_label_is_untouched(self):
        raw = generate_raw(self.gen, 9)
        sample = make_sample(self.gen, self.noise, 9)
        self.assertEqual(sample.label.tobytes(), raw.label.tobytes())
        self.assertGreaterEqual(sample.image.min(), 0.0)
        self.assertLessEqual(sample.image.max(), 1.0)

    def test_deterministic(self):
        first = make_sample(self.gen, self.noise, 123)
        second = make_sample(self.gen, self.noise, 123)
        self.assertEqual(first.image.tobytes(), second.image.tobytes())

    def test_patch_larger_than_image(self):
        small = build_generator_config(2, image_size=32, circle_center=[16, 16], circle_radius=12, mean_length=5)
        with self.assertRaises(ConfigurationError):
            make_sample(small, self.noise, 1)

    def test_iter_samples_uses_derived_seeds(self):
        samples = list(iter_samples(self.gen, self.noise, 77, start=3, count=2))
        self.assertEqual([i for i, _ in samples], [3, 4])
        self.assertEqual(samples[0][1].seed, derive_seed(77, 3))
        np.testing.assert_array_equal(samples[1][1].image, make_sample(self.gen, self.noise, derive_seed(77, 4)).image)

    def test_label_fraction_of_dataset2(self):
        fractions = [s.label_fraction for _, s in iter_samples(self.gen, self.noise, 2017, count=100)]
        self.assertTrue(0.02 <= np.mean(fractions) <= 0.15)
        self.assertGreater(min(fractions), 0.0)
