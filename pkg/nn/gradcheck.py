"""
有限差分梯度检查。双精度、中心差分、eps = 1e-4。
误差取 max|解析 - 数值| / max(max|解析|, max|数值|)。
测试和 gradcheck 命令共用这里的检查函数。
"""
from dataclasses import dataclass

import numpy as np

from nn import functional as F
from nn.loss import pixelwise_softmax_ce

EPS = 1e-4
TOLERANCE = 1e-5
SOFTMAX_TOLERANCE = 1e-6
# 按整个张量归一化，比逐元素的相对误差宽松
ERROR_MEASURE = 'error = max|analytic - numeric| / max(max|analytic|, max|numeric|), per tensor'


@dataclass
class GradcheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.error < self.tolerance)


def numerical_gradient(f, x, eps=EPS):
    """对 x 的每个元素做中心差分，x 原地扰动后恢复"""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        plus = f()
        flat[i] = old - eps
        minus = f()
        flat[i] = old
        out[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _max_error(pairs):
    return max(relative_error(a, n) for a, n in pairs)


def check_conv2d(rng, stride=1, pad=1):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out, _ = F.conv2d_forward(x, w, b, stride, pad)
    r = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(F.conv2d_forward(x, w, b, stride, pad)[0] * r))

    _, cache = F.conv2d_forward(x, w, b, stride, pad)
    dx, dw, db = F.conv2d_backward(r, cache)
    error = _max_error([
        (dx, numerical_gradient(loss, x)),
        (dw, numerical_gradient(loss, w)),
        (db, numerical_gradient(loss, b)),
    ])
    return GradcheckResult('conv2d(stride={}, pad={})'.format(stride, pad), error, TOLERANCE)


def check_batchnorm(rng):
    x = rng.standard_normal((2, 3, 5, 5)) * 2.0 + 0.5
    gamma = rng.standard_normal(3)
    beta = rng.standard_normal(3)
    r = rng.standard_normal(x.shape)

    def running():
        return {'mean': np.zeros(3), 'var': np.ones(3), 'count': 0}

    def loss():
        return float(np.sum(F.batchnorm_forward(x, gamma, beta, running(), train=True)[0] * r))

    _, cache = F.batchnorm_forward(x, gamma, beta, running(), train=True)
    dx, dgamma, dbeta = F.batchnorm_backward(r, cache)
    error = _max_error([
        (dx, numerical_gradient(loss, x)),
        (dgamma, numerical_gradient(loss, gamma)),
        (dbeta, numerical_gradient(loss, beta)),
    ])
    return GradcheckResult('batchnorm(train)', error, TOLERANCE)


def check_relu(rng):
    # 远离 0 这个不可导点
    x = rng.uniform(0.1, 1.0, size=(2, 3, 6, 6)) * rng.choice([-1.0, 1.0], size=(2, 3, 6, 6))
    r = rng.standard_normal(x.shape)

    def loss():
        return float(np.sum(F.relu_forward(x)[0] * r))

    _, mask = F.relu_forward(x)
    error = relative_error(F.relu_backward(r, mask), numerical_gradient(loss, x))
    return GradcheckResult('relu', error, TOLERANCE)


def check_maxpool(rng):
    # 每个窗口里的值两两相差至少 0.01，扰动不会改变 argmax
    x = (rng.permutation(2 * 2 * 7 * 7).reshape(2, 2, 7, 7) * 0.01).astype(np.float64)
    out, cache = F.maxpool2_forward(x)
    r = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(F.maxpool2_forward(x)[0] * r))

    error = relative_error(F.maxpool2_backward(r, cache), numerical_gradient(loss, x))
    return GradcheckResult('maxpool2', error, TOLERANCE)


def check_upsample(rng):
    x = rng.standard_normal((2, 2, 4, 5))
    r = rng.standard_normal((2, 2, 8, 10))

    def loss():
        return float(np.sum(F.upsample2_forward(x) * r))

    error = relative_error(F.upsample2_backward(r), numerical_gradient(loss, x))
    return GradcheckResult('upsample2', error, TOLERANCE)


def check_crop_concat(rng):
    """拼接后接一个卷积头，一起检查"""
    deep = rng.standard_normal((2, 2, 4, 4))
    skip = rng.standard_normal((2, 3, 7, 7))
    w = rng.standard_normal((2, 5, 3, 3))
    b = rng.standard_normal(2)
    r = rng.standard_normal((2, 2, 2, 2))

    def forward():
        cat, cat_cache = F.crop_concat_forward(deep, skip)
        out, conv_cache = F.conv2d_forward(cat, w, b)
        return out, cat_cache, conv_cache

    def loss():
        return float(np.sum(forward()[0] * r))

    _, cat_cache, conv_cache = forward()
    d_cat, dw, db = F.conv2d_backward(r, conv_cache)
    d_deep, d_skip = F.crop_concat_backward(d_cat, cat_cache)
    error = _max_error([
        (d_deep, numerical_gradient(loss, deep)),
        (d_skip, numerical_gradient(loss, skip)),
        (dw, numerical_gradient(loss, w)),
        (db, numerical_gradient(loss, b)),
    ])
    return GradcheckResult('crop_concat+conv', error, TOLERANCE)


def check_softmax_ce(rng):
    logits = rng.standard_normal((2, 2, 5, 5))
    labels = rng.integers(0, 2, size=(2, 7, 7))

    def loss():
        return pixelwise_softmax_ce(logits, labels)[0]

    _, d_logits = pixelwise_softmax_ce(logits, labels)
    error = relative_error(d_logits, numerical_gradient(loss, logits))
    return GradcheckResult('softmax_ce', error, SOFTMAX_TOLERANCE)


CHECKS = [
    lambda rng: check_conv2d(rng, stride=1, pad=0),
    lambda rng: check_conv2d(rng, stride=1, pad=1),
    lambda rng: check_conv2d(rng, stride=2, pad=1),
    check_batchnorm,
    check_relu,
    check_maxpool,
    check_upsample,
    check_crop_concat,
    check_softmax_ce,
]


def run_all(seed=0):
    rng = np.random.default_rng(seed)
    return [check(rng) for check in CHECKS]
