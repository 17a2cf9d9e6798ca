"""
逐图和汇总报表。CSV 列为 image_id, Sn, Sp, Acc, AUC，最后一行是均值；
没有定义的指标写成 undefined。
"""
import csv
import logging
from dataclasses import dataclass

import numpy as np

from evaluation.metrics import acc, confusion, sn, sp
from evaluation.roc import auc, roc
from vesselseg.exceptions import SingleClassError

logger = logging.getLogger(__name__)

COLUMNS = ['image_id', 'Sn', 'Sp', 'Acc', 'AUC']
UNDEFINED = 'undefined'


@dataclass
class CaseReport:
    case_id: str
    counts: object
    sn: float
    sp: float
    acc: float
    auc: float
    curve: object

    def row(self):
        return [self.case_id] + [format_metric(v) for v in (self.sn, self.sp, self.acc, self.auc)]


def format_metric(value):
    if value is None:
        return UNDEFINED
    return '{:.4f}'.format(value)


def evaluate_case(case_id, prob, truth, fov, threshold=0.5, strategy='distinct', grid=256):
    counts = confusion(np.asarray(prob) >= threshold, truth, fov)
    try:
        curve = roc(prob, truth, fov, strategy=strategy, grid=grid)
    except SingleClassError as e:
        logger.warning('%s: %s, AUC reported as %s', case_id, e, UNDEFINED)
        curve = None
    report = CaseReport(case_id, counts, sn(counts), sp(counts), acc(counts),
                        auc(curve) if curve is not None else None, curve)
    logger.info('%s: Sn=%s Sp=%s Acc=%s AUC=%s', case_id, *report.row()[1:])
    return report


def mean_row(reports):
    """每一列只对有定义的值取均值"""
    row = ['mean']
    for attr in ('sn', 'sp', 'acc', 'auc'):
        values = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
        row.append(format_metric(float(np.mean(values)) if values else None))
    return row


def best_case(reports):
    scored = [r for r in reports if r.auc is not None]
    if not scored:
        return None
    return max(scored, key=lambda r: r.auc)


def write_report_csv(path, reports):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(COLUMNS)
        for report in reports:
            writer.writerow(report.row())
        if reports:
            writer.writerow(mean_row(reports))
    return path


def write_roc_csv(path, curve):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['threshold', 'fpr', 'tpr'])
        for threshold, x, y in curve.points():
            writer.writerow([repr(threshold), repr(x), repr(y)])
    return path
