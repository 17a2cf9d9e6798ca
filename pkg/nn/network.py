"""
全卷积分割网络。层按顺序执行，crop_concat 层从更早的某一层取第二个输入。
卷积都不补零，输出比输入小，靠裁剪对齐。
"""
import json
import logging
from dataclasses import dataclass

import numpy as np

from nn.layers import BatchNorm2d, Conv2d, CropConcat, MaxPool2d, ReLU, Upsample2d
from nn.loss import softmax
from nn.tensor import DTYPES, as_tensor, center_crop
from vesselseg.exceptions import ShapeError

logger = logging.getLogger(__name__)

# 搜索最小输入尺寸时的上限
MAX_PROBE_SIZE = 4096


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_channels: int = 1

    def to_json(self):
        return {'input_channels': self.input_channels, 'layers': [dict(layer) for layer in self.layers]}

    @classmethod
    def from_json(cls, data):
        from nn.serializers import NetworkSpecSerializer

        return NetworkSpecSerializer.build(data)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding='utf-8') as f:
            return cls.from_json(json.load(f))


def _conv(k, i, o):
    return {'type': 'conv', 'kernel': k, 'in_channels': i, 'out_channels': o, 'stride': 1, 'pad': 0}


def default_spec():
    """
    满足所有约束的最小网络：无全连接、一个拼接层、BN、逐像素 softmax。
    第 5 层（池化前的 relu）是拼接的来源。
    """
    layers = [
        _conv(3, 1, 16), {'type': 'batchnorm', 'channels': 16}, {'type': 'relu'},
        _conv(3, 16, 16), {'type': 'batchnorm', 'channels': 16}, {'type': 'relu'},
        {'type': 'maxpool'},
        _conv(3, 16, 32), {'type': 'batchnorm', 'channels': 32}, {'type': 'relu'},
        {'type': 'upsample'},
        {'type': 'crop_concat', 'source': 5},
        _conv(3, 48, 16), {'type': 'batchnorm', 'channels': 16}, {'type': 'relu'},
        _conv(1, 16, 2),
    ]
    return NetworkSpec.from_json({'input_channels': 1, 'layers': layers})


class Network:

    def __init__(self, spec, dtype='float64'):
        self.spec = spec
        self.dtype = DTYPES[dtype] if isinstance(dtype, str) else dtype
        self.layers = []
        channels_after = []
        channels = spec.input_channels
        for layer in spec.layers:
            built = self._build_layer(layer, channels_after)
            channels = built.output_channels(channels)
            channels_after.append(channels)
            self.layers.append(built)
        self.outputs = []

    def _build_layer(self, layer, channels_after):
        kind = layer['type']
        if kind == 'conv':
            return Conv2d(layer['kernel'], layer['in_channels'], layer['out_channels'],
                          layer['stride'], layer['pad'], dtype=self.dtype)
        if kind == 'batchnorm':
            return BatchNorm2d(layer['channels'], dtype=self.dtype)
        if kind == 'relu':
            return ReLU()
        if kind == 'maxpool':
            return MaxPool2d()
        if kind == 'upsample':
            return Upsample2d()
        if kind == 'crop_concat':
            return CropConcat(layer['source'], channels_after[layer['source']])
        raise ShapeError('Unknown layer type {}'.format(kind))

    def init_weights(self, rng):
        for layer in self.layers:
            if isinstance(layer, Conv2d):
                layer.init_weights(rng)

    # 参数访问

    def named_params(self):
        for index, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield '{}.{}'.format(index, name), layer, name, value

    def named_buffers(self):
        for index, layer in enumerate(self.layers):
            for name, value in layer.buffers.items():
                yield '{}.{}'.format(index, name), value

    def state_arrays(self):
        arrays = {key: value for key, _, _, value in self.named_params()}
        arrays.update(dict(self.named_buffers()))
        return arrays

    def load_arrays(self, arrays):
        for key, value in self.state_arrays().items():
            if key not in arrays:
                raise ShapeError('Checkpoint is missing tensor {}'.format(key))
            if arrays[key].shape != value.shape:
                raise ShapeError('Tensor {}: checkpoint shape {} vs network shape {}'.format(
                    key, arrays[key].shape, value.shape))
            value[...] = arrays[key]

    # 尺寸

    def output_size(self, h, w):
        """由层定义推出的输出尺寸；任何一层尺寸小于 1 时报错"""
        sizes = []
        cur = (h, w)
        for index, layer in enumerate(self.layers):
            cur = layer.output_hw(*cur)
            if isinstance(layer, CropConcat):
                src = sizes[layer.source]
                if src[0] < cur[0] or src[1] < cur[1]:
                    raise ShapeError('Input {}x{}: crop_concat at layer {} gets a {}x{} skip for a {}x{} map'.format(
                        h, w, index, src[0], src[1], cur[0], cur[1]))
            if cur[0] < 1 or cur[1] < 1:
                raise ShapeError('Input {}x{} shrinks to {}x{} at layer {}'.format(h, w, cur[0], cur[1], index))
            sizes.append(cur)
        return cur

    def min_input_size(self):
        for size in range(1, MAX_PROBE_SIZE + 1):
            try:
                self.output_size(size, size)
            except ShapeError:
                continue
            return size
        raise ShapeError('No input up to {} pixels produces a valid output'.format(MAX_PROBE_SIZE))

    def check_input(self, x):
        h, w = x.shape[2:]
        minimum = self.min_input_size()
        if h < minimum or w < minimum:
            raise ShapeError('Input {}x{} is smaller than the network minimum {}x{}'.format(h, w, minimum, minimum))
        return self.output_size(h, w)

    # 前向 / 反向

    def forward(self, x, train=False):
        """返回 logits，outputs 里保留每层输出供反向和诊断使用"""
        x = as_tensor(x, self.dtype)
        self.check_input(x)
        self.outputs = []
        for layer in self.layers:
            if isinstance(layer, CropConcat):
                x = layer.forward(x, self.outputs[layer.source], train=train)
            else:
                x = layer.forward(x, train=train)
            self.outputs.append(x)
        return x

    def backward(self, d_logits):
        pending = {}
        grad = d_logits
        for index in range(len(self.layers) - 1, -1, -1):
            if index in pending:
                grad = grad + pending.pop(index)
            layer = self.layers[index]
            if isinstance(layer, CropConcat):
                grad, d_skip = layer.backward(grad)
                if layer.source in pending:
                    pending[layer.source] = pending[layer.source] + d_skip
                else:
                    pending[layer.source] = d_skip
            else:
                grad = layer.backward(grad)
        return grad

    def predict(self, image):
        """推理模式下返回血管概率（softmax 第 1 通道）"""
        single = np.ndim(image) == 2
        logits = self.forward(image, train=False)
        prob = softmax(logits)[:, 1]
        return prob[0] if single else prob

    def activation_norms(self):
        return [('{}:{}'.format(i, layer.describe()), float(np.sqrt(np.sum(np.square(out, dtype=np.float64)))))
                for i, (layer, out) in enumerate(zip(self.layers, self.outputs))]

    def summary(self):
        return [layer.describe() for layer in self.layers]

    def full_size_margin(self, h, w):
        """镜像补边的最小宽度，使输出不小于原图"""
        for margin in range(MAX_PROBE_SIZE):
            try:
                oh, ow = self.output_size(h + 2 * margin, w + 2 * margin)
            except ShapeError:
                continue
            if oh >= h and ow >= w:
                return margin
        raise ShapeError('No mirror padding up to {} pixels restores a {}x{} output'.format(MAX_PROBE_SIZE, h, w))

    def predict_full_size(self, image):
        """输入四周镜像补边后再前向，裁出和输入一样大的概率图"""
        image = np.asarray(image, dtype=np.float64)
        h, w = image.shape
        margin = self.full_size_margin(h, w)
        padded = np.pad(image, margin, mode='symmetric')
        return center_crop(self.predict(padded), (h, w))
