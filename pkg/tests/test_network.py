import doctest
import unittest

import numpy
import numpy.testing

import dcgnet
import dcgnet.network
from dcgnet import autodiff
from dcgnet.autodiff import Tensor
from dcgnet.errors import CheckpointError, ShapeError
from dcgnet.network import DCGNet, NetworkConfig


def load_tests(loader, tests, ignore):
    tests.addTests(doctest.DocTestSuite(dcgnet.network))
    return tests


HIERARCHY = dcgnet.build_hierarchy(dcgnet.icosphere(1), levels=2, factor=4)


def _input(seed: int, features: int = 5) -> Tensor:
    return Tensor(numpy.random.default_rng(seed).normal(size=(42, features)))


def _config(**changes) -> NetworkConfig:
    values = dict(in_features=5, width=8, attention_features=4)
    values.update(changes)
    return NetworkConfig(**values)


class TestArchitecture(unittest.TestCase):
    def test_encoder_levels(self):
        net = DCGNet(HIERARCHY, _config())
        features = net.encode(_input(0))
        self.assertEqual([f.shape for f in features], [(42, 8), (11, 8), (4, 8)])
        self.assertEqual(net.nonlocal_level, 2)

    def test_fusion_lands_on_decoder_level(self):
        net = DCGNet(HIERARCHY, _config())
        features = net.encode(_input(0))
        self.assertEqual(net.fuse(features, 1).shape, (11, 8))
        self.assertEqual(net.fuse(features, 2).shape, (42, 8))
        with self.assertRaises(ValueError):
            net.fuse(features, 3)
        self.assertEqual(net.fusion_fcs[1].weight.shape, (2 * 4, 8))

    def test_forward_shape_and_determinism(self):
        first = DCGNet(HIERARCHY, _config(seed=3)).forward(_input(1))
        second = DCGNet(HIERARCHY, _config(seed=3)).forward(_input(1))
        self.assertEqual(first.shape, (42, 3))
        numpy.testing.assert_array_equal(first.data, second.data)
        other = DCGNet(HIERARCHY, _config(seed=4)).forward(_input(1))
        self.assertFalse(numpy.array_equal(first.data, other.data))

    def test_wrong_input_shape(self):
        net = DCGNet(HIERARCHY, _config())
        with self.assertRaises(ShapeError):
            net.forward(_input(0, features=4))

    def test_flat_variant(self):
        net = DCGNet(HIERARCHY, _config(ushape=False))
        self.assertEqual(net.levels, 0)
        self.assertEqual(len(net.encoder_units), 1)
        self.assertEqual(len(net.encoder_units[0]), 4)
        self.assertEqual(net.fusion_attention, [])
        self.assertEqual(net.nonlocal_level, 0)
        self.assertEqual(net.forward(_input(2)).shape, (42, 3))

    def test_explicit_nonlocal_level(self):
        net = DCGNet(HIERARCHY, _config(nonlocal_level=1))
        self.assertEqual(net.nonlocal_level, 1)
        with self.assertRaises(ValueError):
            DCGNet(HIERARCHY, _config(nonlocal_level=3))


class TestAdjacencyVariants(unittest.TestCase):
    def test_fixed_and_adaptive_agree_at_initialization(self):
        adaptive = DCGNet(HIERARCHY, _config())
        fixed = DCGNet(HIERARCHY, _config(adaptive_adjacency=False))
        x = _input(5)
        numpy.testing.assert_array_equal(adaptive.forward(x).data, fixed.forward(x).data)

    def test_parameter_difference_is_one_square_per_unit(self):
        adaptive = DCGNet(HIERARCHY, _config())
        fixed = DCGNet(HIERARCHY, _config(adaptive_adjacency=False))
        counts = HIERARCHY.node_counts
        squares = sum(len(units) * counts[level] ** 2 for level, units in enumerate(adaptive.encoder_units))
        squares += sum(len(units) * counts[2 - step] ** 2 for step, units in enumerate(adaptive.decoder_units, start=1))
        self.assertEqual(squares, 2 * (42**2 + 11**2 + 4**2) + 2 * (11**2 + 42**2))
        self.assertEqual(adaptive.parameter_count() - fixed.parameter_count(), squares)
        self.assertEqual(len(adaptive.learned_adjacencies()), 10)
        self.assertEqual(fixed.learned_adjacencies(), {})

    def test_shared_adjacency_per_level(self):
        net = DCGNet(HIERARCHY, _config(share_adjacency=True))
        residuals = net.learned_adjacencies()
        self.assertEqual(sorted(len(r) for r in residuals.values()), [4, 11, 42])

    def test_learned_adjacency_moves_during_training(self):
        net = DCGNet(HIERARCHY, _config())
        loss = dcgnet.vertex_loss(net.forward(_input(0)), Tensor(HIERARCHY.levels[0].vertices))
        autodiff.backward(loss)
        name = next(iter(net.learned_adjacencies()))
        gradient = net.named_parameters()[name].grad
        self.assertGreater(float(numpy.abs(gradient).max()), 0.0)


class TestNonLocal(unittest.TestCase):
    def test_zero_projection_equals_network_without_block(self):
        with_block = DCGNet(HIERARCHY, _config())
        without = DCGNet(HIERARCHY, _config(nonlocal_block=False))
        x = _input(6)
        numpy.testing.assert_array_equal(with_block.forward(x).data, without.forward(x).data)
        self.assertIsNone(without.nonlocal_block)
        self.assertEqual(
            with_block.parameter_count() - without.parameter_count(),
            with_block.nonlocal_block.parameter_count(),
        )

    def test_nonzero_projection_changes_output(self):
        net = DCGNet(HIERARCHY, _config())
        x = _input(6)
        before = net.forward(x).data
        net.nonlocal_block.out.data[:] = 0.5
        self.assertFalse(numpy.array_equal(before, net.forward(x).data))


class TestState(unittest.TestCase):
    def test_state_round_trip(self):
        source = DCGNet(HIERARCHY, _config(seed=1))
        target = DCGNet(HIERARCHY, _config(seed=2))
        target.load_state(source.state())
        x = _input(0)
        numpy.testing.assert_array_equal(source.forward(x).data, target.forward(x).data)

    def test_state_is_a_copy(self):
        net = DCGNet(HIERARCHY, _config())
        state = net.state()
        state["stem.weight"][:] = 0.0
        self.assertFalse((net.stem.weight.data == 0.0).all())

    def test_mismatched_state_lists_every_problem(self):
        net = DCGNet(HIERARCHY, _config())
        state = net.state()
        del state["stem.weight"]
        state["stem.bias"] = numpy.zeros([2, 2])
        state["extra"] = numpy.zeros(1)
        with self.assertRaises(CheckpointError) as context:
            net.load_state(state)
        message = str(context.exception)
        for fragment in ("missing parameter stem.weight", "unexpected parameter extra", "stem.bias"):
            self.assertIn(fragment, message)
