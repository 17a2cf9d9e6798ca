"""
混淆矩阵和 Sn / Sp / Acc。只统计视野（FOV）内的像素。
分母为 0 时指标没有定义，返回 None（不是 0）。
"""
from dataclasses import dataclass

import numpy as np

from vesselseg.exceptions import ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def _check_shapes(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ShapeError('Masks must share one shape, got {}'.format(sorted(shapes)))


def confusion(pred_binary, truth, fov=None):
    if fov is None:
        fov = np.ones(np.shape(truth), dtype=bool)
    _check_shapes(pred_binary, truth, fov)
    inside = np.asarray(fov, dtype=bool)
    pred = np.asarray(pred_binary, dtype=bool)[inside]
    real = np.asarray(truth, dtype=bool)[inside]
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & real)),
        fp=int(np.count_nonzero(pred & ~real)),
        tn=int(np.count_nonzero(~pred & ~real)),
        fn=int(np.count_nonzero(~pred & real)),
    )


def _ratio(num, den):
    if den == 0:
        return None
    return num / den


def sn(c):
    return _ratio(c.tp, c.tp + c.fn)


def sp(c):
    return _ratio(c.tn, c.tn + c.fp)


def acc(c):
    return _ratio(c.tp + c.tn, c.total)


def tpr(c):
    return sn(c)


def fpr(c):
    return _ratio(c.fp, c.fp + c.tn)
