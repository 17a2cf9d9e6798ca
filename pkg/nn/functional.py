"""
各层的前向/反向计算，纯函数。前向返回 (输出, cache)，反向只需要 cache。
所有归约都按固定顺序进行，同样的输入得到逐位相同的结果。
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from nn.tensor import crop_offsets
from vesselseg.exceptions import ShapeError, UninitializedStatisticsError

BN_EPS = 1e-7
BN_MOMENTUM = 0.1


def conv_output_size(size, kernel, stride=1, pad=0):
    return (size + 2 * pad - kernel) // stride + 1


# 卷积

def conv2d_forward(x, weight, bias, stride=1, pad=0):
    """互相关；输出尺寸 floor((in + 2*pad - k) / stride) + 1"""
    n, c, h, w = x.shape
    out_ch, in_ch, kh, kw = weight.shape
    if in_ch != c:
        raise ShapeError('conv2d: input shape {} does not match weight shape {}'.format(x.shape, weight.shape))
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError('conv2d: input shape {} is too small for weight shape {}'.format(x.shape, weight.shape))

    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    # (n, c, ho, wo, kh, kw)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    cache = (x.shape, xp.shape, windows, weight, stride, pad)
    return np.ascontiguousarray(out), cache


def conv2d_backward(d_out, cache):
    x_shape, xp_shape, windows, weight, stride, pad = cache
    _, _, ho, wo = d_out.shape
    _, _, kh, kw = weight.shape

    d_bias = d_out.sum(axis=(0, 2, 3))
    d_weight = np.tensordot(d_out, windows, axes=([0, 2, 3], [0, 2, 3]))

    d_xp = np.zeros(xp_shape, dtype=d_out.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(d_out, weight[:, :, i, j], axes=([1], [0]))
            d_xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
    h, w = x_shape[2:]
    d_x = d_xp[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(d_x), d_weight, d_bias


# 批归一化

def batchnorm_forward(x, gamma, beta, running, train=True, eps=BN_EPS, momentum=BN_MOMENTUM):
    """
    running 是 {'mean', 'var', 'count'} 字典，训练模式下原地更新。
    推理模式用滑动统计量，count 为 0 时报错。
    """
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError('batchnorm: input shape {} does not match parameter shape {}'.format(
            x.shape, gamma.shape))
    axes = (0, 2, 3)
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.size // channels
        unbiased = var * m / max(m - 1, 1)
        running['mean'][...] = (1 - momentum) * running['mean'] + momentum * mean
        running['var'][...] = (1 - momentum) * running['var'] + momentum * unbiased
        running['count'] += 1
    else:
        if running['count'] == 0:
            raise UninitializedStatisticsError(
                'batchnorm: running statistics are uninitialized; train at least one step first')
        mean = running['mean']
        var = running['var']

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
    return out.astype(x.dtype, copy=False), (x_hat, inv_std, gamma, train)


def batchnorm_backward(d_out, cache):
    x_hat, inv_std, gamma, train = cache
    axes = (0, 2, 3)
    d_beta = d_out.sum(axis=axes)
    d_gamma = (d_out * x_hat).sum(axis=axes)
    d_xhat = d_out * gamma[None, :, None, None]
    if not train:
        return d_xhat * inv_std[None, :, None, None], d_gamma, d_beta
    # 批统计量本身也依赖 x，这两项不能省
    m = d_out.size // d_out.shape[1]
    d_x = (inv_std[None, :, None, None] / m) * (
        m * d_xhat
        - d_xhat.sum(axis=axes)[None, :, None, None]
        - x_hat * (d_xhat * x_hat).sum(axis=axes)[None, :, None, None]
    )
    return d_x.astype(d_out.dtype, copy=False), d_gamma, d_beta


# 激活、池化、上采样

def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(d_out, mask):
    return d_out * mask


def maxpool2_forward(x):
    """2x2 步长 2；奇数尺寸向下取整，多出来的一行/列不参与池化"""
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise ShapeError('maxpool: input shape {} is smaller than the 2x2 window'.format(x.shape))
    blocks = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, ho, wo, 4)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return out, (x.shape, argmax)


def maxpool2_backward(d_out, cache):
    x_shape, argmax = cache
    n, c, ho, wo = d_out.shape
    routed = np.zeros((n, c, ho, wo, 4), dtype=d_out.dtype)
    np.put_along_axis(routed, argmax[..., None], d_out[..., None], axis=-1)
    routed = routed.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    d_x = np.zeros(x_shape, dtype=d_out.dtype)
    d_x[:, :, :2 * ho, :2 * wo] = routed
    return d_x


def upsample2_forward(x):
    """最近邻放大 2 倍"""
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(d_out):
    n, c, h, w = d_out.shape
    return d_out.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


# 裁剪拼接

def crop_concat_forward(deep, skip):
    """把 skip 中心裁剪到 deep 的大小，沿通道拼接（deep 在前）"""
    if deep.shape[0] != skip.shape[0]:
        raise ShapeError('crop_concat: batch sizes differ, deep {} vs skip {}'.format(deep.shape, skip.shape))
    try:
        top, left = crop_offsets(skip.shape[2:], deep.shape[2:])
    except ShapeError:
        raise ShapeError('crop_concat: skip {} is smaller than deep {}'.format(skip.shape, deep.shape))
    h, w = deep.shape[2:]
    cropped = skip[:, :, top:top + h, left:left + w]
    out = np.concatenate([deep, cropped], axis=1)
    return out, (deep.shape[1], skip.shape, top, left)


def crop_concat_backward(d_out, cache):
    deep_channels, skip_shape, top, left = cache
    h, w = d_out.shape[2:]
    d_deep = d_out[:, :deep_channels]
    d_skip = np.zeros(skip_shape, dtype=d_out.dtype)
    d_skip[:, :, top:top + h, left:left + w] = d_out[:, deep_channels:]
    return np.ascontiguousarray(d_deep), d_skip
