import doctest
import os
import tempfile
import unittest

import numpy
import numpy.testing
import pandas
from hypothesis import given, settings, strategies

import dcgnet.metrics
from dcgnet import metrics
from dcgnet.autodiff import Tensor
from dcgnet.errors import ShapeError


def load_tests(loader, tests, ignore):
    tests.addTests(doctest.DocTestSuite(dcgnet.metrics))
    return tests


def _rotation(rng: numpy.random.Generator) -> numpy.ndarray:
    q, r = numpy.linalg.qr(rng.normal(size=(3, 3)))
    q = q * numpy.sign(numpy.diag(r))
    if numpy.linalg.det(q) < 0.0:
        q[:, 0] = -q[:, 0]
    return q


class TestJointMetrics(unittest.TestCase):
    def test_mpjpe_oracle(self):
        gt = numpy.zeros([3, 3])
        pred = numpy.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
        self.assertAlmostEqual(metrics.mpjpe(pred, gt), 7.0 / 3.0)
        self.assertAlmostEqual(metrics.mpjpe(Tensor(pred), Tensor(gt)), 7.0 / 3.0)
        with self.assertRaises(ShapeError):
            metrics.mpjpe(pred[:, :2], gt[:, :2])

    def test_pck_counts_the_boundary(self):
        gt = numpy.zeros([4, 3])
        pred = numpy.array([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0], [4.0, 0, 0]])
        self.assertEqual(metrics.pck(pred, gt, 2.0), 0.5)
        self.assertEqual(metrics.pck(pred, gt, 10.0), 1.0)
        with self.assertRaises(ValueError):
            metrics.pck(pred, gt, 0.0)

    def test_auc_is_mean_pck(self):
        gt = numpy.zeros([4, 3])
        pred = numpy.array([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0], [4.0, 0, 0]])
        self.assertAlmostEqual(metrics.auc(pred, gt, [0.0, 2.0, 4.0]), (0.0 + 0.5 + 1.0) / 3)
        self.assertEqual(metrics.auc(gt, gt), 1.0)
        with self.assertRaises(ValueError):
            metrics.auc(pred, gt, [])
        with self.assertRaises(ValueError):
            metrics.auc(pred, gt, [-1.0])
        self.assertEqual(len(metrics.DEFAULT_THRESHOLDS), 31)

    @settings(max_examples=25, deadline=None)
    @given(strategies.integers(min_value=0, max_value=10_000))
    def test_procrustes_recovers_similarity_transform(self, seed):
        rng = numpy.random.default_rng(seed)
        gt = rng.normal(size=(12, 3))
        rotation = _rotation(rng)
        pred = rng.uniform(0.5, 2.0) * gt @ rotation.T + rng.normal(size=3)
        numpy.testing.assert_allclose(metrics.procrustes_align(pred, gt), gt, atol=1e-8)
        self.assertLess(metrics.reconstruction_error(pred, gt), 1e-8)
        self.assertLessEqual(metrics.reconstruction_error(pred, gt), metrics.mpjpe(pred, gt))

    def test_procrustes_minimizes_squared_error(self):
        rng = numpy.random.default_rng(0)
        for _ in range(1000):
            pred, gt = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
            aligned = metrics.procrustes_align(pred, gt)
            self.assertLessEqual(
                numpy.sum((aligned - gt) ** 2), numpy.sum((pred - gt) ** 2) + 1e-9
            )

    def test_procrustes_excludes_reflections(self):
        rng = numpy.random.default_rng(1)
        gt = rng.normal(size=(8, 3))
        mirrored = gt * [1.0, 1.0, -1.0]
        aligned = metrics.procrustes_align(mirrored, gt)
        self.assertGreater(metrics.mpjpe(aligned, gt), 1e-3)

    def test_alignment_never_worsens_the_error(self):
        rng = numpy.random.default_rng(3)
        for index in range(1000):
            gt = rng.normal(size=(12, 3))
            if index % 2:
                pred = rng.normal(size=(12, 3))
            else:
                # near-correct pose with one outlier joint
                pred = gt + 0.05 * rng.normal(size=(12, 3))
                pred[rng.integers(12)] += 3.0 * rng.normal(size=3)
            self.assertLessEqual(
                metrics.reconstruction_error(pred, gt), metrics.mpjpe(pred, gt) + 1e-9
            )

    def test_collapsed_predictions(self):
        rng = numpy.random.default_rng(4)
        gt = rng.normal(size=(12, 3))
        centered = numpy.tile(gt.mean(axis=0), (12, 1))
        numpy.testing.assert_allclose(metrics.procrustes_align(numpy.zeros([12, 3]), gt), centered)

        collinear = numpy.outer(numpy.arange(12.0), [1.0, 0.0, 0.0])
        aligned = metrics.procrustes_align(collinear, gt)
        self.assertTrue(numpy.all(numpy.isfinite(aligned)))
        self.assertLessEqual(numpy.sum((aligned - gt) ** 2), numpy.sum((centered - gt) ** 2) + 1e-9)

    def test_procrustes_degenerate_inputs(self):
        with self.assertRaises(ValueError):
            metrics.procrustes_align(numpy.zeros([2, 3]), numpy.ones([2, 3]))
        with self.assertRaises(ValueError):
            metrics.procrustes_align(numpy.zeros([5, 3]), numpy.ones([5, 3]))
        with self.assertRaises(ValueError):
            metrics.procrustes_align(
                numpy.eye(5, 3), numpy.outer(numpy.arange(5.0), [1.0, 2.0, 3.0])
            )


class TestEvaluate(unittest.TestCase):
    def setUp(self):
        rng = numpy.random.default_rng(2)
        self.gt_joints = [rng.normal(size=(12, 3)) * 100.0 for _ in range(3)]
        self.pred_joints = [j + [[10.0, 0.0, 0.0]] for j in self.gt_joints]
        self.gt_meshes = [rng.normal(size=(20, 3)) for _ in range(3)]
        self.pred_meshes = [m + [[0.0, 3.0, 4.0]] for m in self.gt_meshes]

    def test_report_aggregates_samples(self):
        report = metrics.evaluate(
            ["a", "b", "c"], self.pred_joints, self.gt_joints, self.pred_meshes, self.gt_meshes
        )
        self.assertAlmostEqual(report.mpjpe, 10.0)
        self.assertLess(report.reconst_error, 1e-6)
        self.assertEqual(report.pck, 1.0)
        self.assertAlmostEqual(report.vertex_error, 5.0)
        self.assertEqual(list(report.per_sample["id"]), ["a", "b", "c"])
        self.assertEqual(report.summary()["samples"], 3)

    def test_collapsed_predictions_are_evaluated(self):
        gt = self.gt_joints[0]
        collinear = numpy.outer(numpy.arange(12.0), [1.0, 0.0, 0.0])
        report = metrics.evaluate(
            ["zero", "line"],
            [numpy.zeros([12, 3]), collinear],
            [gt, gt],
            self.gt_meshes[:2],
            self.gt_meshes[:2],
        )
        self.assertTrue(numpy.isfinite(report.reconst_error))
        self.assertLessEqual(report.reconst_error, report.mpjpe + 1e-9)

    def test_mismatched_inputs(self):
        with self.assertRaises(ValueError):
            metrics.evaluate(["a"], self.pred_joints, self.gt_joints, self.pred_meshes, self.gt_meshes)
        with self.assertRaises(ValueError):
            metrics.evaluate([], [], [], [], [])

    def test_write(self):
        report = metrics.evaluate(
            ["a", "b", "c"], self.pred_joints, self.gt_joints, self.pred_meshes, self.gt_meshes
        )
        with tempfile.TemporaryDirectory() as directory:
            text_path, csv_path = report.write(directory, "test")
            self.assertEqual(os.path.basename(text_path), "test.txt")
            with open(text_path) as f:
                lines = f.read().splitlines()
            table = pandas.read_csv(csv_path)
        self.assertTrue(lines[0].startswith("# alignment"))
        values = dict(line.split(" = ") for line in lines[1:])
        self.assertAlmostEqual(float(values["mpjpe"]), 10.0)
        self.assertEqual(int(values["samples"]), 3)
        self.assertEqual(len(table), 3)
        numpy.testing.assert_allclose(table["mpjpe"], 10.0)
