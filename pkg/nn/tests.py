import math
import os
import tempfile
import threading
import unittest
from contextlib import closing
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase, tag

from evaluation.roc import auc, roc
from nn import functional as F
from nn import gradcheck
from nn.checkpoint import checkpoint_from_network, load_checkpoint, save_checkpoint
from nn.layers import BatchNorm2d
from nn.loss import pixelwise_softmax_ce, softmax
from nn.network import Network, NetworkSpec, default_spec
from nn.serializers import NetworkSpecSerializer, TrainingConfigSerializer
from nn.tensor import assert_finite
from nn.training import PREFETCH_THREAD_NAME, Trainer, manifest_batches, prefetch, synthetic_batches, train
from noisegen.config import build_noise_config
from noisegen.noise import iter_samples, make_sample
from synthgen.config import build_generator_config
from vesselseg.exceptions import (
    ConfigurationError, DataError, LabelError, NumericalError, ShapeError, UninitializedStatisticsError,
)
from vesselseg.seeding import derive_seed, get_rng

SLOW = bool(os.environ.get('VESSELSEG_SLOW'))


def training_config(**overrides):
    params = dict(settings.VESSELSEG['TRAINING'])
    params.update(overrides)
    return TrainingConfigSerializer.build(params)


def small_configs(size=32):
    gen = build_generator_config(2, image_size=size, circle_center=[size // 2, size // 2],
                                 circle_radius=size // 2 - 4, mean_length=5, sigma_length=1, max_nodes=10)
    noise = build_noise_config(2, image_size=size, patch_size=size // 4)
    return gen, noise


def fresh_network(seed=0, dtype='float64'):
    net = Network(default_spec(), dtype=dtype)
    net.init_weights(np.random.default_rng(seed))
    return net


class ConvTests(SimpleTestCase):

    def test_sum_of_ones(self):
        out, _ = F.conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
        self.assertEqual(out.shape, (1, 1, 1, 1))
        self.assertEqual(out[0, 0, 0, 0], 9.0)

    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((2, 1, 6, 7))
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        out, _ = F.conv2d_forward(x, kernel, np.zeros(1), stride=1, pad=1)
        np.testing.assert_array_equal(out, x)

    def test_output_size(self):
        x = np.zeros((1, 2, 9, 11))
        out, _ = F.conv2d_forward(x, np.zeros((3, 2, 3, 3)), np.zeros(3), stride=2, pad=1)
        self.assertEqual(out.shape, (1, 3, 5, 6))
        self.assertEqual(F.conv_output_size(9, 3, 2, 1), 5)

    def test_channel_mismatch(self):
        with self.assertRaises(ShapeError) as ctx:
            F.conv2d_forward(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)), np.zeros(1))
        self.assertIn('(1, 2, 5, 5)', str(ctx.exception))
        self.assertIn('(1, 3, 3, 3)', str(ctx.exception))


class BatchNormTests(SimpleTestCase):

    def running(self, channels):
        return {'mean': np.zeros(channels), 'var': np.ones(channels), 'count': 0}

    def test_train_mode_normalizes(self):
        x = np.random.default_rng(1).standard_normal((4, 3, 5, 5)) * 3.0 + 2.0
        out, _ = F.batchnorm_forward(x, np.ones(3), np.zeros(3), self.running(3), train=True)
        self.assertTrue(np.all(np.abs(out.mean(axis=(0, 2, 3))) < 1e-6))
        self.assertTrue(np.all(np.abs(out.var(axis=(0, 2, 3)) - 1) < 1e-4))

    def test_standardized_input_passes_through(self):
        x = np.random.default_rng(2).standard_normal((4, 2, 6, 6))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        out, _ = F.batchnorm_forward(x, np.ones(2), np.zeros(2), self.running(2), train=True)
        self.assertLess(np.max(np.abs(out - x)), 1e-6)

    def test_running_statistics_update(self):
        x = np.random.default_rng(3).standard_normal((2, 2, 4, 4)) + 5.0
        running = self.running(2)
        F.batchnorm_forward(x, np.ones(2), np.zeros(2), running, train=True)
        self.assertEqual(running['count'], 1)
        np.testing.assert_allclose(running['mean'], 0.1 * x.mean(axis=(0, 2, 3)))

    def test_infer_before_training(self):
        layer = BatchNorm2d(2)
        with self.assertRaises(UninitializedStatisticsError):
            layer.forward(np.zeros((1, 2, 3, 3)), train=False)
        layer.forward(np.random.default_rng(0).standard_normal((1, 2, 3, 3)), train=True)
        layer.forward(np.zeros((1, 2, 3, 3)), train=False)
        self.assertEqual(int(layer.buffers['count'][0]), 1)


class ElementwiseLayerTests(SimpleTestCase):

    def test_relu(self):
        out, _ = F.relu_forward(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out, [0.0, 0.0, 2.0])

    def test_maxpool_routes_to_argmax(self):
        x = np.random.default_rng(4).standard_normal((2, 3, 7, 6))
        out, cache = F.maxpool2_forward(x)
        self.assertEqual(out.shape, (2, 3, 3, 3))
        d_out = np.random.default_rng(5).standard_normal(out.shape)
        d_x = F.maxpool2_backward(d_out, cache)
        self.assertAlmostEqual(d_x.sum(), d_out.sum())
        self.assertEqual(np.count_nonzero(d_x), d_out.size)
        # 奇数尺寸多出来的一行不参与
        self.assertFalse(d_x[:, :, 6, :].any())

    def test_upsample_of_maxpool_on_constant(self):
        x = np.full((1, 2, 8, 8), 0.7)
        pooled, _ = F.maxpool2_forward(x)
        np.testing.assert_array_equal(F.upsample2_forward(pooled), x)

    def test_upsample_backward_sums(self):
        d_out = np.ones((1, 1, 4, 6))
        np.testing.assert_array_equal(F.upsample2_backward(d_out), np.full((1, 1, 2, 3), 4.0))


class CropConcatTests(SimpleTestCase):

    def test_equal_sizes_concatenate(self):
        deep = np.zeros((1, 2, 5, 5))
        skip = np.ones((1, 3, 5, 5))
        out, _ = F.crop_concat_forward(deep, skip)
        self.assertEqual(out.shape, (1, 5, 5, 5))
        np.testing.assert_array_equal(out[:, 2:], skip)

    def test_center_crop(self):
        skip = np.arange(100, dtype=np.float64).reshape(1, 1, 10, 10)
        out, cache = F.crop_concat_forward(np.zeros((1, 1, 6, 6)), skip)
        np.testing.assert_array_equal(out[0, 1], skip[0, 0, 2:8, 2:8])
        d_deep, d_skip = F.crop_concat_backward(np.ones((1, 2, 6, 6)), cache)
        self.assertEqual(d_deep.shape, (1, 1, 6, 6))
        self.assertEqual(d_skip.sum(), 36)
        self.assertFalse(d_skip[0, 0, :2].any())

    def test_skip_smaller_than_deep(self):
        with self.assertRaises(ShapeError):
            F.crop_concat_forward(np.zeros((1, 1, 6, 6)), np.zeros((1, 1, 4, 4)))


class SoftmaxLossTests(SimpleTestCase):

    def test_equal_logits(self):
        loss, _ = pixelwise_softmax_ce(np.zeros((2, 2, 3, 3)), np.zeros((2, 3, 3)))
        self.assertAlmostEqual(loss, math.log(2))

    def test_large_margin(self):
        labels = np.random.default_rng(0).integers(0, 2, size=(1, 4, 4))
        logits = np.zeros((1, 2, 4, 4))
        np.put_along_axis(logits, labels[:, None], 50.0, axis=1)
        loss, _ = pixelwise_softmax_ce(logits, labels)
        self.assertLess(loss, 1e-12)

    def test_labels_are_cropped(self):
        labels = np.zeros((1, 8, 8))
        labels[0, 3:5, 3:5] = 1
        loss, d_logits = pixelwise_softmax_ce(np.zeros((1, 2, 4, 4)), labels)
        self.assertEqual(d_logits.shape, (1, 2, 4, 4))
        with self.assertRaises(ShapeError):
            pixelwise_softmax_ce(np.zeros((1, 2, 4, 4)), labels, crop_to_logits=False)

    def test_non_binary_labels(self):
        with self.assertRaises(LabelError):
            pixelwise_softmax_ce(np.zeros((1, 2, 2, 2)), np.full((1, 2, 2), 2))

    def test_softmax_sums_to_one(self):
        probs = softmax(np.random.default_rng(3).standard_normal((2, 2, 5, 5)) * 10)
        self.assertLess(np.max(np.abs(probs.sum(axis=1) - 1)), 1e-6)


class GradientCheckTests(SimpleTestCase):
    """每一层的解析梯度和中心差分对比，双精度"""

    def setUp(self):
        self.rng = np.random.default_rng(2017)

    def assertPasses(self, result):
        self.assertTrue(result.passed, '{}: {:.3e} >= {:.0e}'.format(result.name, result.error, result.tolerance))

    def test_conv2d(self):
        for stride, pad in ((1, 0), (1, 1), (2, 1)):
            self.assertPasses(gradcheck.check_conv2d(self.rng, stride, pad))

    def test_batchnorm(self):
        self.assertPasses(gradcheck.check_batchnorm(self.rng))

    def test_relu(self):
        self.assertPasses(gradcheck.check_relu(self.rng))

    def test_maxpool(self):
        self.assertPasses(gradcheck.check_maxpool(self.rng))

    def test_upsample(self):
        self.assertPasses(gradcheck.check_upsample(self.rng))

    def test_crop_concat(self):
        self.assertPasses(gradcheck.check_crop_concat(self.rng))

    def test_softmax_ce(self):
        self.assertPasses(gradcheck.check_softmax_ce(self.rng))

    def test_whole_network(self):
        # 没有 relu/池化，扰动不会跨过不可导点；反向仍要经过 skip 分支
        spec = NetworkSpec.from_json({'input_channels': 1, 'layers': [
            {'type': 'conv', 'kernel': 3, 'in_channels': 1, 'out_channels': 2},
            {'type': 'batchnorm', 'channels': 2},
            {'type': 'conv', 'kernel': 3, 'in_channels': 2, 'out_channels': 3},
            {'type': 'crop_concat', 'source': 1},
            {'type': 'conv', 'kernel': 1, 'in_channels': 5, 'out_channels': 2},
        ]})
        net = Network(spec, dtype='float64')
        net.init_weights(self.rng)
        x = self.rng.standard_normal((2, 1, 9, 9))
        labels = self.rng.integers(0, 2, size=(2, 9, 9))
        weight = net.layers[0].params['weight']

        def loss():
            return pixelwise_softmax_ce(net.forward(x, train=True), labels)[0]

        _, d_logits = pixelwise_softmax_ce(net.forward(x, train=True), labels)
        net.backward(d_logits)
        analytic = net.layers[0].grads['weight'].copy()
        numeric = gradcheck.numerical_gradient(loss, weight)
        self.assertLess(gradcheck.relative_error(analytic, numeric), 1e-5)


class NetworkSpecTests(SimpleTestCase):

    def test_default_spec_has_one_skip_and_two_channel_head(self):
        spec = default_spec()
        kinds = [layer['type'] for layer in spec.layers]
        self.assertEqual(kinds.count('crop_concat'), 1)
        self.assertIn('batchnorm', kinds)
        self.assertEqual(spec.layers[-1]['out_channels'], 2)

    def test_dense_layer_is_rejected(self):
        data = default_spec().to_json()
        data['layers'].insert(0, {'type': 'dense', 'in_channels': 1, 'out_channels': 1})
        with self.assertRaises(ConfigurationError):
            NetworkSpecSerializer.build(data)

    def test_head_must_have_two_channels(self):
        data = default_spec().to_json()
        data['layers'][-1]['out_channels'] = 3
        with self.assertRaises(ConfigurationError):
            NetworkSpec.from_json(data)

    def test_channel_mismatch(self):
        data = default_spec().to_json()
        data['layers'][3]['in_channels'] = 8
        with self.assertRaises(ConfigurationError):
            NetworkSpec.from_json(data)

    def test_skip_source_must_come_earlier(self):
        data = default_spec().to_json()
        data['layers'][11]['source'] = 11
        with self.assertRaises(ConfigurationError):
            NetworkSpec.from_json(data)

    def test_json_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'net.json'
            path.write_text('{"input_channels": 1, "layers": [{"type": "conv", "kernel": 1, '
                            '"in_channels": 1, "out_channels": 2}]}', encoding='utf-8')
            spec = NetworkSpec.from_file(path)
        self.assertEqual(len(spec.layers), 1)
        self.assertEqual(Network(spec).output_size(5, 7), (5, 7))


class NetworkTests(SimpleTestCase):

    def setUp(self):
        self.net = fresh_network(3)
        # 推理模式需要 batchnorm 的滑动统计量
        self.net.forward(np.random.default_rng(4).random((2, 1, 32, 32)), train=True)

    def test_published_output_size(self):
        for size in (128, 256, 33):
            expected = 2 * ((size - 4) // 2) - 6
            self.assertEqual(self.net.output_size(size, size), (expected, expected))

    def test_inputs_of_different_sizes(self):
        rng = np.random.default_rng(5)
        self.assertEqual(self.net.predict(rng.random((128, 128))).shape, (118, 118))
        self.assertEqual(self.net.predict(rng.random((40, 56))).shape, (30, 46))

    def test_minimum_input_size(self):
        self.assertEqual(self.net.min_input_size(), 12)
        self.net.predict(np.zeros((12, 12)))
        with self.assertRaises(ShapeError) as ctx:
            self.net.predict(np.zeros((11, 20)))
        self.assertIn('12x12', str(ctx.exception))

    def test_constant_input_gives_constant_output(self):
        prob = self.net.predict(np.full((40, 40), 0.3))
        self.assertTrue(np.allclose(prob, prob[0, 0], rtol=0, atol=1e-12))

    def test_inference_is_deterministic(self):
        x = np.random.default_rng(6).random((30, 30))
        np.testing.assert_array_equal(self.net.predict(x), self.net.predict(x))

    def test_probabilities(self):
        prob = self.net.predict(np.random.default_rng(7).random((2, 24, 24)))
        self.assertEqual(prob.shape, (2, 14, 14))
        self.assertTrue(np.all((prob >= 0) & (prob <= 1)))

    def test_full_size_prediction(self):
        prob = self.net.predict_full_size(np.random.default_rng(8).random((30, 37)))
        self.assertEqual(prob.shape, (30, 37))

    def test_summary(self):
        summary = self.net.summary()
        self.assertEqual(len(summary), len(self.net.layers))
        self.assertEqual(summary[0], 'conv3x3(1->16)')
        self.assertIn('crop_concat(<-5)', summary)


class CheckpointTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'model.ckpt'

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bitwise(self):
        for dtype in ('float64', 'float32'):
            net = fresh_network(9, dtype)
            net.forward(np.random.default_rng(1).random((2, 1, 20, 20)), train=True)
            save_checkpoint(self.path, checkpoint_from_network(net, iteration=12, rng_state=get_rng(5).bit_generator.state))
            loaded = load_checkpoint(self.path)
            self.assertEqual(loaded.iteration, 12)
            restored = loaded.build_network()
            rng = np.random.default_rng(2)
            for _ in range(10):
                x = rng.random((20, 20))
                self.assertEqual(net.predict(x).tobytes(), restored.predict(x).tobytes())

    def test_bad_magic(self):
        self.path.write_bytes(b'NOTACKPT' + bytes(32))
        with self.assertRaises(DataError):
            load_checkpoint(self.path)

    def test_truncated(self):
        net = fresh_network(0)
        net.forward(np.random.default_rng(1).random((1, 1, 16, 16)), train=True)
        save_checkpoint(self.path, checkpoint_from_network(net))
        raw = self.path.read_bytes()
        self.path.write_bytes(raw[:-10])
        with self.assertRaises(DataError):
            load_checkpoint(self.path)

    def test_missing_file(self):
        with self.assertRaises(DataError):
            load_checkpoint(Path(self.tmp.name) / 'nope.ckpt')


class TrainingTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)
        self.gen, self.noise = small_configs()

    def tearDown(self):
        self.tmp.cleanup()

    def params(self, net):
        return {key: value.copy() for key, _, _, value in net.named_params()}

    def test_zero_learning_rate_keeps_weights(self):
        net = fresh_network(1)
        before = self.params(net)
        trainer = Trainer(net, training_config(lr=0.0, checkpoint_every=0, dtype='float64'), self.out)
        trainer.run(synthetic_batches(self.gen, self.noise, 1, 2), 5)
        for key, value in self.params(net).items():
            self.assertEqual(value.tobytes(), before[key].tobytes())

    def test_overfit_single_sample(self):
        gen, noise = small_configs(48)
        sample = make_sample(gen, noise, 2017)

        def fixed():
            while True:
                yield sample.image[None, None], sample.label[None]

        trainer = Trainer(fresh_network(2), training_config(checkpoint_every=0, dtype='float64'), self.out)
        trainer.run(fixed(), 200)
        self.assertLess(trainer.losses[-1], trainer.losses[0])
        curve = (self.out / 'loss.csv').read_text().splitlines()
        self.assertEqual(curve[0], 'iteration,loss')
        self.assertEqual(len(curve), 201)

    def test_resume_matches_uninterrupted_run(self):
        config = training_config(checkpoint_every=3, dtype='float64')
        straight = Trainer(fresh_network(4), config, self.out / 'a')
        straight.run(synthetic_batches(self.gen, self.noise, 11, 2), 6)

        first = Trainer(fresh_network(4), config, self.out / 'b')
        first.run(synthetic_batches(self.gen, self.noise, 11, 2), 3)
        checkpoint = load_checkpoint(self.out / 'b' / 'checkpoint_0000003.ckpt')
        resumed = Trainer.from_checkpoint(checkpoint, config, self.out / 'b')
        self.assertEqual(resumed.iteration, 3)
        resumed.run(synthetic_batches(self.gen, self.noise, 11, 2, start_iteration=3), 6)

        for key, value in straight.net.state_arrays().items():
            self.assertEqual(value.tobytes(), resumed.net.state_arrays()[key].tobytes(), key)
        self.assertEqual(len((self.out / 'b' / 'loss.csv').read_text().splitlines()), 7)

    def test_manifest_sampling_resumes(self):
        samples = [s for _, s in iter_samples(self.gen, self.noise, 3, count=4)]
        images = [s.image for s in samples]
        labels = [s.label for s in samples]
        config = training_config(checkpoint_every=2, dtype='float64')

        straight = Trainer(fresh_network(5), config, self.out / 'a', rng=get_rng(8))
        straight.run(manifest_batches(images, labels, 2, straight.rng), 4)

        first = Trainer(fresh_network(5), config, self.out / 'b', rng=get_rng(8))
        first.run(manifest_batches(images, labels, 2, first.rng), 2)
        resumed = Trainer.from_checkpoint(load_checkpoint(self.out / 'b' / 'checkpoint_0000002.ckpt'),
                                          config, self.out / 'b')
        resumed.run(manifest_batches(images, labels, 2, resumed.rng), 4)
        for key, value in straight.net.state_arrays().items():
            self.assertEqual(value.tobytes(), resumed.net.state_arrays()[key].tobytes(), key)

    def test_nan_loss_aborts_with_diagnostics(self):
        net = fresh_network(6)
        net.layers[-1].params['bias'][0] = np.nan
        trainer = Trainer(net, training_config(checkpoint_every=0), self.out)
        with self.assertRaises(NumericalError) as ctx:
            trainer.run(synthetic_batches(self.gen, self.noise, 1, 2), 3)
        self.assertEqual(ctx.exception.iteration, 0)
        self.assertEqual(len(ctx.exception.norms), len(net.layers))
        self.assertIn('iteration: 0', ctx.exception.diagnostics())

    def test_finite_check_reports_lazily(self):
        calls = []

        def norms():
            calls.append(1)
            return [('0:conv3x3(1->16)', 1.0)]

        assert_finite(np.ones(3), 'the loss gradient', 4, norms)
        self.assertEqual(calls, [])
        with self.assertRaises(NumericalError) as ctx:
            assert_finite(np.array([1.0, np.inf]), 'the loss gradient', 4, norms)
        self.assertEqual(ctx.exception.iteration, 4)
        self.assertEqual(ctx.exception.norms, [('0:conv3x3(1->16)', 1.0)])
        self.assertIn('the loss gradient', str(ctx.exception))

    def test_train_returns_checkpoint(self):
        checkpoint = train(fresh_network(7), synthetic_batches(self.gen, self.noise, 1, 2), 2, self.out,
                           training_config(checkpoint_every=0))
        self.assertEqual(checkpoint.iteration, 2)
        self.assertTrue((self.out / 'final.ckpt').exists())
        self.assertEqual(len(checkpoint.velocities), len(list(fresh_network(7).named_params())))


class PrefetchTests(SimpleTestCase):

    def test_order_is_preserved(self):
        self.assertEqual(list(prefetch(iter(range(50)), 3)), list(range(50)))
        self.assertEqual(list(prefetch(iter(range(5)), 0)), list(range(5)))

    def test_errors_reach_the_consumer(self):
        def broken():
            yield 1
            raise DataError('boom')

        items = prefetch(broken(), 2)
        self.assertEqual(next(items), 1)
        with self.assertRaises(DataError):
            next(items)

    def test_closing_stops_the_producer(self):
        def producers():
            return sum(1 for t in threading.enumerate() if t.name == PREFETCH_THREAD_NAME)

        def endless():
            n = 0
            while True:
                yield n
                n += 1

        before = producers()
        items = prefetch(endless(), 2)
        self.assertEqual([next(items) for _ in range(3)], [0, 1, 2])
        self.assertEqual(producers(), before + 1)
        items.close()
        self.assertEqual(producers(), before)

    def test_synthetic_batches_are_indexed(self):
        gen, noise = small_configs()
        whole = synthetic_batches(gen, noise, 5, 2)
        next(whole)
        second_images, _ = next(whole)
        later_images, _ = next(synthetic_batches(gen, noise, 5, 2, start_iteration=1))
        np.testing.assert_array_equal(second_images, later_images)
        self.assertEqual(second_images.shape, (2, 1, 32, 32))


@tag('slow')
@unittest.skipUnless(SLOW, 'set VESSELSEG_SLOW=1 to run')
class DeskScaleTrainingTests(SimpleTestCase):
    """默认网络、dataset#2、128x128、5000 次迭代，20 个留出样本上 AUC >= 0.95"""

    def test_heldout_auc(self):
        gen = build_generator_config(2)
        noise = build_noise_config(2, image_size=gen.image_size)
        config = training_config(checkpoint_every=0, iterations=5000)
        net = Network(default_spec(), dtype=config['dtype'])
        net.init_weights(get_rng(gen.seed, stream=2))
        batches = prefetch(synthetic_batches(gen, noise, gen.seed, 2), 4)
        with tempfile.TemporaryDirectory() as tmp, closing(batches):
            Trainer(net, config, tmp).run(batches, config['iterations'])
        scores = []
        for _, sample in iter_samples(gen, noise, derive_seed(gen.seed, 2 ** 62), count=20):
            prob = net.predict(sample.image)
            truth = sample.label[5:-5, 5:-5].astype(bool)
            scores.append(auc(roc(prob, truth)))
        self.assertGreaterEqual(float(np.mean(scores)), 0.95)
