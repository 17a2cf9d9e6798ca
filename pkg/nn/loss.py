import numpy as np

from nn.tensor import center_crop
from vesselseg.exceptions import LabelError, ShapeError


def softmax(logits):
    """逐像素在通道维做 softmax"""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def pixelwise_softmax_ce(logits, labels, crop_to_logits=True):
    """
    逐像素 softmax 交叉熵，对所有像素取平均。
    标签比 logits 大时按和拼接层一样的规则中心裁剪。
    返回 (loss, d_logits)。
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    elif labels.ndim == 4:
        labels = labels[:, 0]
    if labels.shape[0] != logits.shape[0]:
        raise ShapeError('softmax_ce: logits {} and labels {} have different batch sizes'.format(
            logits.shape, labels.shape))
    if labels.shape[1:] != logits.shape[2:]:
        if not crop_to_logits:
            raise ShapeError('softmax_ce: logits {} and labels {} differ in size'.format(
                logits.shape, labels.shape))
        labels = center_crop(labels, logits.shape[2:])
    if not np.all((labels == 0) | (labels == 1)):
        raise LabelError('softmax_ce: labels must be binary (0/1)')

    labels = labels.astype(np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_prob = shifted - log_norm
    picked = np.take_along_axis(log_prob, labels[:, None], axis=1)
    count = labels.size
    loss = -float(picked.sum()) / count

    d_logits = np.exp(log_prob)
    onehot = np.zeros_like(d_logits)
    np.put_along_axis(onehot, labels[:, None], 1.0, axis=1)
    d_logits = (d_logits - onehot) / count
    return loss, d_logits
