"""
ROC 曲线和 AUC。阈值约定：prob >= t 判为血管。
auc_rank 用 Mann-Whitney 秩统计量（并列记 1/2），作为梯形积分的独立校验。
"""
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from vesselseg.exceptions import EvaluationError, SingleClassError

_trapezoid = getattr(np, 'trapezoid', None) or np.trapz

STRATEGIES = ('distinct', 'grid')


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


def _scores(prob, truth, fov):
    prob = np.asarray(prob, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if fov is None:
        fov = np.ones(truth.shape, dtype=bool)
    fov = np.asarray(fov, dtype=bool)
    if not (prob.shape == truth.shape == fov.shape):
        raise EvaluationError('prob {}, truth {} and fov {} must share one shape'.format(
            prob.shape, truth.shape, fov.shape))
    scores = prob[fov]
    labels = truth[fov]
    if scores.size == 0:
        raise EvaluationError('The field of view is empty')
    positives = int(labels.sum())
    if positives == 0 or positives == labels.size:
        raise SingleClassError('ROC needs both vessel and background pixels inside the field of view')
    return scores, labels


def roc(prob, truth, fov=None, strategy='distinct', grid=256):
    scores, labels = _scores(prob, truth, fov)
    if strategy == 'distinct':
        thresholds = np.unique(scores)[::-1]
    elif strategy == 'grid':
        thresholds = np.linspace(1.0, 0.0, int(grid))
        thresholds = np.append(thresholds[thresholds > scores.min()], scores.min())
    else:
        raise EvaluationError('Unknown threshold strategy {}'.format(strategy))

    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    tp = pos.size - np.searchsorted(pos, thresholds, side='left')
    fp = neg.size - np.searchsorted(neg, thresholds, side='left')

    return RocCurve(
        thresholds=np.concatenate([[np.inf], thresholds]),
        fpr=np.concatenate([[0.0], fp / neg.size]),
        tpr=np.concatenate([[0.0], tp / pos.size]),
    )


def auc(curve):
    return float(_trapezoid(curve.tpr, curve.fpr))


def auc_rank(prob, truth, fov=None):
    scores, labels = _scores(prob, truth, fov)
    ranks = rankdata(scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
