"""
网络里所有激活和参数都是 (batch, channel, height, width) 的 numpy 数组。
"""
import numpy as np

from vesselseg.exceptions import NumericalError, ShapeError

DTYPES = {
    'float32': np.float32,
    'float64': np.float64,
}


def as_tensor(data, dtype=np.float64):
    """把 2-D 图像或 4-D 数组整理成连续的 4-D 张量"""
    array = np.asarray(data, dtype=dtype)
    if array.ndim == 2:
        array = array[None, None]
    elif array.ndim == 3:
        array = array[:, None]
    if array.ndim != 4 or min(array.shape) < 1:
        raise ShapeError('Expected a non-empty (batch, channel, height, width) tensor, got shape {}'.format(
            np.shape(data)))
    return np.ascontiguousarray(array)


def assert_finite(array, where, iteration=None, norms=None):
    """norms 可以是返回 [(name, norm), ...] 的函数，只在出错时才调用"""
    if not np.all(np.isfinite(array)):
        raise NumericalError('Non-finite values in {}'.format(where), iteration=iteration,
                             norms=norms() if callable(norms) else norms)


def crop_offsets(source_hw, target_hw):
    """中心裁剪的起点，source 必须不小于 target"""
    (sh, sw), (th, tw) = source_hw, target_hw
    if sh < th or sw < tw:
        raise ShapeError('Cannot crop {}x{} down to {}x{}'.format(sh, sw, th, tw))
    return (sh - th) // 2, (sw - tw) // 2


def center_crop(array, target_hw):
    top, left = crop_offsets(array.shape[-2:], target_hw)
    return array[..., top:top + target_hw[0], left:left + target_hw[1]]
