import numpy as np

from nn import functional as F
from vesselseg.exceptions import ShapeError


class Layer:
    """
    所有层的基类。params/grads 是同名键的字典，
    buffers 是不参与梯度下降但要存进 checkpoint 的状态。
    """
    kind = None

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, d_out):
        raise NotImplementedError

    def output_hw(self, h, w):
        return h, w

    def output_channels(self, channels):
        return channels

    def describe(self):
        return self.kind


class Conv2d(Layer):
    kind = 'conv'

    def __init__(self, kernel, in_channels, out_channels, stride=1, pad=0, dtype=np.float64):
        super().__init__()
        self.kernel = kernel
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.pad = pad
        self.params = {
            'weight': np.zeros((out_channels, in_channels, kernel, kernel), dtype=dtype),
            'bias': np.zeros(out_channels, dtype=dtype),
        }

    def init_weights(self, rng):
        # He 初始化，偏置为 0
        fan_in = self.in_channels * self.kernel * self.kernel
        weight = self.params['weight']
        weight[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=weight.shape)
        self.params['bias'][...] = 0

    def forward(self, x, train=False):
        out, self.cache = F.conv2d_forward(x, self.params['weight'], self.params['bias'], self.stride, self.pad)
        return out

    def backward(self, d_out):
        d_x, self.grads['weight'], self.grads['bias'] = F.conv2d_backward(d_out, self.cache)
        return d_x

    def output_hw(self, h, w):
        return (F.conv_output_size(h, self.kernel, self.stride, self.pad),
                F.conv_output_size(w, self.kernel, self.stride, self.pad))

    def output_channels(self, channels):
        return self.out_channels

    def describe(self):
        return 'conv{k}x{k}({i}->{o})'.format(k=self.kernel, i=self.in_channels, o=self.out_channels)


class BatchNorm2d(Layer):
    kind = 'batchnorm'

    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        self.channels = channels
        self.params = {
            'gamma': np.ones(channels, dtype=dtype),
            'beta': np.zeros(channels, dtype=dtype),
        }
        self.buffers = {
            'running_mean': np.zeros(channels, dtype=dtype),
            'running_var': np.ones(channels, dtype=dtype),
            'count': np.zeros(1, dtype=np.int64),
        }

    def _running(self):
        return {
            'mean': self.buffers['running_mean'],
            'var': self.buffers['running_var'],
            'count': self.buffers['count'][0],
        }

    def forward(self, x, train=False):
        running = self._running()
        out, self.cache = F.batchnorm_forward(x, self.params['gamma'], self.params['beta'], running, train)
        self.buffers['count'][0] = running['count']
        return out

    def backward(self, d_out):
        d_x, self.grads['gamma'], self.grads['beta'] = F.batchnorm_backward(d_out, self.cache)
        return d_x

    def describe(self):
        return 'bn({})'.format(self.channels)


class ReLU(Layer):
    kind = 'relu'

    def forward(self, x, train=False):
        out, self.cache = F.relu_forward(x)
        return out

    def backward(self, d_out):
        return F.relu_backward(d_out, self.cache)


class MaxPool2d(Layer):
    kind = 'maxpool'

    def forward(self, x, train=False):
        out, self.cache = F.maxpool2_forward(x)
        return out

    def backward(self, d_out):
        return F.maxpool2_backward(d_out, self.cache)

    def output_hw(self, h, w):
        return h // 2, w // 2


class Upsample2d(Layer):
    kind = 'upsample'

    def forward(self, x, train=False):
        return F.upsample2_forward(x)

    def backward(self, d_out):
        return F.upsample2_backward(d_out)

    def output_hw(self, h, w):
        return 2 * h, 2 * w


class CropConcat(Layer):
    """把 source 层的输出裁剪后拼到当前输入后面"""
    kind = 'crop_concat'

    def __init__(self, source, source_channels):
        super().__init__()
        self.source = source
        self.source_channels = source_channels

    def forward(self, x, skip=None, train=False):
        if skip is None:
            raise ShapeError('crop_concat: missing skip input from layer {}'.format(self.source))
        out, self.cache = F.crop_concat_forward(x, skip)
        return out

    def backward(self, d_out):
        return F.crop_concat_backward(d_out, self.cache)

    def output_channels(self, channels):
        return channels + self.source_channels

    def describe(self):
        return 'crop_concat(<-{})'.format(self.source)
