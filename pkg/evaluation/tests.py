import csv
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from sklearn.metrics import roc_auc_score

from evaluation.metrics import ConfusionCounts, acc, confusion, fpr, sn, sp, tpr
from evaluation.reports import UNDEFINED, best_case, evaluate_case, mean_row, write_report_csv, write_roc_csv
from evaluation.roc import auc, auc_rank, roc
from evaluation.serializers import EvaluationConfigSerializer
from vesselseg.exceptions import ConfigurationError, EvaluationError, ShapeError


def ten_vessels():
    truth = np.zeros((10, 10), dtype=bool)
    truth[0] = True
    return truth


class ConfusionTests(SimpleTestCase):

    def test_perfect_prediction(self):
        truth = ten_vessels()
        c = confusion(truth, truth)
        self.assertEqual((c.tp, c.tn, c.fp, c.fn), (10, 90, 0, 0))

    def test_complement(self):
        truth = ten_vessels()
        c = confusion(~truth, truth)
        self.assertEqual((c.tp, c.tn), (0, 0))
        self.assertEqual(c.total, 100)

    def test_matches_pixel_loop(self):
        rng = np.random.default_rng(0)
        pred = rng.random((32, 32)) < 0.3
        truth = rng.random((32, 32)) < 0.2
        fov = rng.random((32, 32)) < 0.8
        expected = {'tp': 0, 'fp': 0, 'tn': 0, 'fn': 0}
        for y in range(32):
            for x in range(32):
                if not fov[y, x]:
                    continue
                key = ('t' if pred[y, x] == truth[y, x] else 'f') + ('p' if pred[y, x] else 'n')
                expected[key] += 1
        c = confusion(pred, truth, fov)
        self.assertEqual(c, ConfusionCounts(**expected))
        self.assertEqual(c.total, int(fov.sum()))

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            confusion(np.zeros((4, 4)), np.zeros((4, 5)))


class MetricTests(SimpleTestCase):

    def test_arithmetic(self):
        c = ConfusionCounts(tp=3, fp=1, tn=5, fn=1)
        self.assertEqual(sn(c), 0.75)
        self.assertAlmostEqual(sp(c), 5 / 6)
        self.assertEqual(acc(c), 0.8)

    def test_no_false_negatives(self):
        self.assertEqual(sn(ConfusionCounts(tp=4, fp=2, tn=3, fn=0)), 1.0)

    def test_undefined_is_not_zero(self):
        c = ConfusionCounts(tp=0, fp=2, tn=8, fn=0)
        self.assertIsNone(sn(c))
        self.assertEqual(sp(c), 0.8)

    def test_sensitivity_is_tpr_and_specificity_is_one_minus_fpr(self):
        rng = np.random.default_rng(8)
        for tp, fp, tn, fn in rng.integers(1, 500, size=(50, 4)):
            c = ConfusionCounts(tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn))
            self.assertEqual(sn(c), tpr(c))
            self.assertAlmostEqual(sp(c), 1.0 - fpr(c), places=12)


class RocTests(SimpleTestCase):

    def test_perfect_separation(self):
        truth = ten_vessels()
        curve = roc(truth.astype(float), truth)
        self.assertIn((0.0, 1.0), list(zip(curve.fpr.tolist(), curve.tpr.tolist())))
        self.assertEqual(auc(curve), 1.0)
        self.assertEqual(auc_rank(truth.astype(float), truth), 1.0)

    def test_anti_perfect(self):
        truth = ten_vessels()
        prob = 1.0 - truth
        self.assertEqual(auc(roc(prob, truth)), 0.0)
        self.assertEqual(auc_rank(prob, truth), 0.0)

    def test_constant_probability(self):
        curve = roc(np.full((10, 10), 0.4), ten_vessels())
        np.testing.assert_array_equal(curve.fpr, [0.0, 1.0])
        np.testing.assert_array_equal(curve.tpr, [0.0, 1.0])
        self.assertEqual(auc(curve), 0.5)

    def test_endpoints_and_monotone(self):
        rng = np.random.default_rng(1)
        truth = rng.random((40, 40)) < 0.2
        prob = np.clip(truth * 0.3 + rng.random((40, 40)) * 0.7, 0, 1)
        for strategy in ('distinct', 'grid'):
            curve = roc(prob, truth, strategy=strategy, grid=16)
            self.assertEqual((curve.fpr[0], curve.tpr[0]), (0.0, 0.0))
            self.assertEqual((curve.fpr[-1], curve.tpr[-1]), (1.0, 1.0))
            self.assertTrue(np.all(np.diff(curve.fpr) >= 0))
            self.assertTrue(np.all(np.diff(curve.tpr) >= 0))

    def test_points_match_recount(self):
        rng = np.random.default_rng(2)
        prob = np.round(rng.random(1000), 2).reshape(25, 40)
        truth = rng.random((25, 40)) < 0.3
        curve = roc(prob, truth)
        for threshold, x, y in curve.points()[1:]:
            pred = prob >= threshold
            self.assertEqual(x, np.count_nonzero(pred & ~truth) / np.count_nonzero(~truth))
            self.assertEqual(y, np.count_nonzero(pred & truth) / np.count_nonzero(truth))

    def test_trapezoid_matches_rank_statistic(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            size = int(rng.integers(20, 400))
            truth = rng.random(size) < rng.uniform(0.05, 0.5)
            truth[:2] = [True, False]
            # 量化制造并列
            prob = np.round(rng.random(size) + truth * rng.uniform(0, 1), int(rng.integers(1, 4)))
            self.assertLess(abs(auc(roc(prob, truth)) - auc_rank(prob, truth)), 1e-9)

    def test_agrees_with_sklearn(self):
        rng = np.random.default_rng(4)
        truth = rng.random((64, 64)) < 0.15
        prob = np.clip(rng.normal(0.3 + 0.3 * truth, 0.2), 0, 1)
        fov = np.ones((64, 64), dtype=bool)
        fov[:8] = False
        expected = roc_auc_score(truth[fov], prob[fov])
        self.assertAlmostEqual(auc(roc(prob, truth, fov)), expected, places=10)
        self.assertAlmostEqual(auc_rank(prob, truth, fov), expected, places=10)

    def test_monotone_transform_keeps_auc(self):
        rng = np.random.default_rng(5)
        truth = rng.random((30, 30)) < 0.2
        prob = rng.random((30, 30)) * 0.6 + truth * 0.3
        self.assertAlmostEqual(auc(roc(prob, truth)), auc(roc(prob ** 2, truth)), places=12)

    def test_grid_is_close_to_exact(self):
        rng = np.random.default_rng(6)
        truth = rng.random((64, 64)) < 0.2
        prob = np.clip(rng.normal(0.4 + 0.2 * truth, 0.15), 0, 1)
        exact = auc(roc(prob, truth))
        self.assertLess(abs(auc(roc(prob, truth, strategy='grid', grid=256)) - exact), 0.01)

    def test_pixels_outside_fov_are_ignored(self):
        rng = np.random.default_rng(9)
        truth = rng.random((32, 32)) < 0.2
        prob = np.clip(truth * 0.4 + rng.random((32, 32)) * 0.6, 0, 1)
        fov = np.zeros((32, 32), dtype=bool)
        fov[4:28, 4:28] = True
        other_prob = np.where(fov, prob, rng.random((32, 32)))
        other_truth = np.where(fov, truth, rng.random((32, 32)) < 0.5)
        self.assertEqual(confusion(prob >= 0.5, truth, fov), confusion(other_prob >= 0.5, other_truth, fov))
        a, b = roc(prob, truth, fov), roc(other_prob, other_truth, fov)
        np.testing.assert_array_equal(a.fpr, b.fpr)
        np.testing.assert_array_equal(a.tpr, b.tpr)
        self.assertEqual(auc(a), auc(b))
        self.assertEqual(auc_rank(prob, truth, fov), auc_rank(other_prob, other_truth, fov))

    def test_needs_both_classes(self):
        with self.assertRaises(EvaluationError):
            roc(np.random.default_rng(0).random((5, 5)), np.zeros((5, 5), dtype=bool))
        with self.assertRaises(EvaluationError):
            roc(np.zeros((5, 5)), ten_vessels()[:5, :5], np.zeros((5, 5), dtype=bool))

    def test_unknown_strategy(self):
        with self.assertRaises(EvaluationError):
            roc(np.zeros((10, 10)), ten_vessels(), strategy='spline')


class ReportTests(SimpleTestCase):

    def setUp(self):
        truth = ten_vessels()
        rng = np.random.default_rng(7)
        self.good = evaluate_case('01', np.where(truth, 0.9, 0.1), truth, None)
        self.noisy = evaluate_case('02', rng.random((10, 10)), truth, None)
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_case_row(self):
        self.assertEqual(self.good.row(), ['01', '1.0000', '1.0000', '1.0000', '1.0000'])

    def test_mean_skips_undefined(self):
        self.noisy.sn = None
        row = mean_row([self.good, self.noisy])
        self.assertEqual(row[1], '1.0000')
        self.assertEqual(mean_row([self.noisy])[1], UNDEFINED)

    def test_best_case(self):
        self.assertIs(best_case([self.noisy, self.good]), self.good)
        self.assertIsNone(best_case([]))

    def test_fov_without_vessels_is_undefined(self):
        report = evaluate_case('empty', np.random.default_rng(10).random((20, 20)),
                               np.zeros((20, 20), dtype=bool), np.ones((20, 20), dtype=bool))
        self.assertIsNone(report.curve)
        self.assertEqual(report.row()[1], UNDEFINED)
        self.assertEqual(report.row()[4], UNDEFINED)
        self.assertIsNotNone(report.sp)
        self.assertIs(best_case([report, self.good]), self.good)
        self.assertIsNone(best_case([report]))

        path = Path(self.tmp.name) / 'report.csv'
        write_report_csv(path, [self.good, report])
        with open(path, newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[2][0], 'empty')
        self.assertEqual(rows[3], ['mean', '1.0000', rows[3][2], rows[3][3], '1.0000'])

    def test_empty_fov_is_still_an_error(self):
        with self.assertRaises(EvaluationError):
            evaluate_case('none', np.zeros((5, 5)), ten_vessels()[:5, :5], np.zeros((5, 5), dtype=bool))

    def test_report_csv(self):
        path = Path(self.tmp.name) / 'report.csv'
        write_report_csv(path, [self.good, self.noisy])
        with open(path, newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['image_id', 'Sn', 'Sp', 'Acc', 'AUC'])
        self.assertEqual([r[0] for r in rows[1:]], ['01', '02', 'mean'])

    def test_roc_csv(self):
        path = Path(self.tmp.name) / 'roc.csv'
        write_roc_csv(path, self.good.curve)
        lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'threshold,fpr,tpr')
        self.assertEqual(lines[1], 'inf,0.0,0.0')
        self.assertEqual(len(lines), len(self.good.curve.thresholds) + 1)


class EvaluationConfigTests(SimpleTestCase):

    def valid(self):
        return {
            'threshold': 0.5, 'roc_strategy': 'distinct', 'roc_grid': 256, 'roc_distinct_limit': 10 ** 6,
            'stare_fov_threshold': 0.1, 'stare_fov_erosion': 2, 'gray_mode': 'luma',
        }

    def test_valid(self):
        self.assertEqual(EvaluationConfigSerializer.build(self.valid())['roc_grid'], 256)

    def test_rejects_bad_values(self):
        for key, value in (('threshold', 1.5), ('roc_strategy', 'spline'), ('roc_grid', 1), ('gray_mode', 'red')):
            data = self.valid()
            data[key] = value
            with self.assertRaises(ConfigurationError):
                EvaluationConfigSerializer.build(data)
