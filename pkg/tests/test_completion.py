import doctest
import unittest

import numpy
import numpy.testing
import scipy.sparse
import scipy.sparse.csgraph
from hypothesis import given, settings, strategies

import dcgnet
import dcgnet.completion
from dcgnet import autodiff
from dcgnet.autodiff import Tensor
from dcgnet.completion import MaskSpec, apply_mask, completion_step, make_mask, masked_rows
from dcgnet.network import DCGNet, NetworkConfig


def load_tests(loader, tests, ignore):
    tests.addTests(doctest.DocTestSuite(dcgnet.completion))
    return tests


SPHERE = dcgnet.icosphere(2)


class TestMasks(unittest.TestCase):
    @settings(max_examples=30, deadline=None)
    @given(
        strategies.integers(min_value=0, max_value=162),
        strategies.integers(min_value=0, max_value=1000),
    )
    def test_exactly_c_rows_are_zero(self, c, seed):
        mask = make_mask(MaskSpec(c, seed), 162, 4)
        self.assertEqual(int((mask.sum(axis=1) == 0).sum()), c)
        self.assertEqual(set(numpy.unique(mask)) - {0.0, 1.0}, set())
        numpy.testing.assert_array_equal(mask.min(axis=1), mask.max(axis=1))

    def test_edge_counts(self):
        numpy.testing.assert_array_equal(make_mask(MaskSpec(0, 1), 6, 2), numpy.ones([6, 2]))
        numpy.testing.assert_array_equal(make_mask(MaskSpec(6, 1), 6, 2), numpy.zeros([6, 2]))
        with self.assertRaises(ValueError):
            masked_rows(MaskSpec(7, 1), 6)
        with self.assertRaises(ValueError):
            masked_rows(MaskSpec(-1, 1), 6)

    def test_draws_are_reproducible_and_distinct(self):
        masking = MaskSpec(20, seed=3)
        first = masked_rows(masking, 162, draw=(4, 1))
        numpy.testing.assert_array_equal(first, masked_rows(masking, 162, draw=(4, 1)))
        self.assertFalse(numpy.array_equal(first, masked_rows(masking, 162, draw=(4, 2))))
        self.assertEqual(len(set(first.tolist())), 20)

    @settings(max_examples=20, deadline=None)
    @given(
        strategies.integers(min_value=1, max_value=162),
        strategies.integers(min_value=0, max_value=1000),
    )
    def test_patch_is_connected(self, c, seed):
        rows = masked_rows(MaskSpec(c, seed, "contiguous_patch"), 162, SPHERE.neighbors())
        self.assertEqual(len(set(rows.tolist())), c)
        binary = dcgnet.build_adjacency(SPHERE, add_self_loops=False, normalize=False).matrix
        induced = binary[rows][:, rows]
        components, _ = scipy.sparse.csgraph.connected_components(induced, directed=False)
        self.assertEqual(components, 1)

    def test_patch_needs_neighbors(self):
        with self.assertRaises(ValueError):
            masked_rows(MaskSpec(3, 0, "contiguous_patch"), 10)
        with self.assertRaises(ValueError):
            masked_rows(MaskSpec(3, 0, "contiguous_patch"), 10, [[1], [0]])
        with self.assertRaises(ValueError):
            masked_rows(MaskSpec(3, 0, "checkerboard"), 10)

    def test_apply_mask(self):
        x = Tensor(numpy.arange(6.0).reshape(3, 2))
        mask = numpy.array([[1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
        numpy.testing.assert_array_equal(apply_mask(x, mask).data, [[0.0, 1.0], [0.0, 0.0], [4.0, 5.0]])


class TestCompletionStep(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.hierarchy = dcgnet.build_hierarchy(dcgnet.icosphere(1), levels=2, factor=4)
        cls.net = DCGNet(cls.hierarchy, NetworkConfig(in_features=5, width=8, attention_features=4))
        rng = numpy.random.default_rng(0)
        cls.x = numpy.hstack([cls.hierarchy.levels[0].vertices, rng.normal(size=(42, 2))])

    def test_loss_matches_manual_masking(self):
        masking = MaskSpec(5, seed=2)
        loss = completion_step(self.net, Tensor(self.x), masking, draw=(0, 0))
        mask = make_mask(masking, 42, 5, draw=(0, 0))
        prediction = self.net.forward(Tensor(self.x * mask)).data
        expected = numpy.abs(prediction - self.x[:, :3]).sum()
        self.assertAlmostEqual(float(loss.data), expected, places=10)

    def test_masked_rows_do_not_influence_the_prediction(self):
        masking = MaskSpec(8, seed=5, mode="contiguous_patch")
        rows = masked_rows(masking, 42, self.hierarchy.levels[0].neighbors(), draw=(1,))
        changed = self.x.copy()
        changed[rows, 3:] += 100.0
        target = self.x[:, :3]
        first = completion_step(self.net, Tensor(self.x), masking, target, draw=(1,))
        second = completion_step(self.net, Tensor(changed), masking, target, draw=(1,))
        self.assertEqual(float(first.data), float(second.data))

    def test_mean_reduction(self):
        masking = MaskSpec(5, seed=2)
        total = completion_step(self.net, Tensor(self.x), masking, reduction="sum")
        mean = completion_step(self.net, Tensor(self.x), masking, reduction="mean")
        self.assertAlmostEqual(float(total.data) / 42, float(mean.data), places=10)

    def test_gradients_reach_every_layer(self):
        self.net.zero_grad()
        autodiff.backward(completion_step(self.net, Tensor(self.x), MaskSpec(5, seed=1)))
        parameters = self.net.named_parameters()
        self.assertGreater(float(numpy.abs(parameters["stem.weight"].grad).sum()), 0.0)
        self.assertGreater(float(numpy.abs(parameters["head.conv.weight"].grad).sum()), 0.0)
        self.net.zero_grad()
