import doctest
import unittest

import numpy
import numpy.testing
import scipy.sparse
from hypothesis import given, settings, strategies

import dcgnet
import dcgnet.layers
from dcgnet import autodiff, layers
from dcgnet.autodiff import Tensor
from dcgnet.errors import ShapeError
from dcgnet.gradcheck import check_gradients
from dcgnet.mesh import NormalizedAdjacency


def load_tests(loader, tests, ignore):
    tests.addTests(doctest.DocTestSuite(dcgnet.layers))
    return tests


def _leaky(value: float, slope: float = 0.2) -> float:
    return value if value > 0.0 else slope * value


class TestGraphConvolution(unittest.TestCase):
    @settings(max_examples=15, deadline=None)
    @given(strategies.integers(min_value=0, max_value=10_000))
    def test_fixed_layer_matches_loop_oracle(self, seed):
        rng = numpy.random.default_rng(seed)
        adjacency = dcgnet.build_adjacency(dcgnet.icosahedron())
        x = rng.normal(size=(12, 4))
        layer = layers.GraphConvLayer(adjacency, 4, 3, rng)
        a = adjacency.dense()
        w = layer.weight.data
        expected = numpy.zeros([12, 3])
        for i in range(12):
            for o in range(3):
                total = 0.0
                for j in range(12):
                    for k in range(4):
                        total += a[i, j] * x[j, k] * w[k, o]
                expected[i, o] = max(total, 0.0)
        numpy.testing.assert_allclose(layer(Tensor(x)).data, expected, atol=1e-10)

    def test_adaptive_layer_matches_oracle(self):
        rng = numpy.random.default_rng(5)
        adjacency = dcgnet.build_adjacency(dcgnet.icosahedron())
        layer = layers.AdaptiveGraphConvLayer(adjacency, 4, 3, rng, activation=None)
        layer.adjacency.learned.data += rng.normal(size=(12, 12))
        x = rng.normal(size=(12, 4))
        expected = (adjacency.dense() + layer.adjacency.learned.data) @ x @ layer.weight.data
        numpy.testing.assert_allclose(layer(Tensor(x)).data, expected, atol=1e-10)

    def test_adaptive_initialization_equals_self_looped_fixed_layer(self):
        mesh = dcgnet.icosphere(1)
        plain = dcgnet.build_adjacency(mesh, add_self_loops=False, normalize=False)
        looped = dcgnet.build_adjacency(mesh, add_self_loops=True, normalize=False)
        fixed = layers.GraphConvLayer(looped, 5, 4, numpy.random.default_rng(3))
        adaptive = layers.AdaptiveGraphConvLayer(plain, 5, 4, numpy.random.default_rng(3))
        x = Tensor(numpy.random.default_rng(9).normal(size=(42, 5)))
        numpy.testing.assert_array_equal(fixed(x).data, adaptive(x).data)

    def test_frozen_residual_is_not_a_parameter(self):
        adjacency = dcgnet.build_adjacency(dcgnet.tetrahedron())
        rng = numpy.random.default_rng(0)
        learned = layers.AdaptiveGraphConvLayer(adjacency, 2, 2, rng)
        frozen = layers.AdaptiveGraphConvLayer(adjacency, 2, 2, rng, trainable_adjacency=False)
        self.assertEqual(sorted(learned.named_parameters()), ["adjacency.learned", "weight"])
        self.assertEqual(sorted(frozen.named_parameters()), ["weight"])
        self.assertEqual(learned.parameter_count() - frozen.parameter_count(), 16)

    def test_shared_adjacency_is_listed_once(self):
        adjacency = layers.AdaptiveAdjacency(dcgnet.build_adjacency(dcgnet.tetrahedron()))
        rng = numpy.random.default_rng(0)

        class Pair(layers.Layer):
            def __init__(self):
                self.first = layers.AdaptiveGraphConvLayer(adjacency, 2, 2, rng)
                self.second = layers.AdaptiveGraphConvLayer(adjacency, 2, 2, rng)

        names = list(Pair().named_parameters())
        self.assertEqual(
            names, ["first.adjacency.learned", "first.weight", "second.weight"]
        )

    def test_residual_gradient_reaches_non_neighbors(self):
        adjacency = dcgnet.build_adjacency(dcgnet.icosahedron())
        layer = layers.AdaptiveGraphConvLayer(
            adjacency, 3, 3, numpy.random.default_rng(1), activation=None
        )
        x = Tensor(numpy.random.default_rng(2).normal(size=(12, 3)))
        autodiff.backward(autodiff.sum(layer(x)))
        structure = adjacency.structure(True)
        self.assertTrue((numpy.abs(layer.adjacency.learned.grad[~structure]) > 0.0).any())

    def test_row_count_mismatch(self):
        layer = layers.GraphConvLayer(
            dcgnet.build_adjacency(dcgnet.tetrahedron()), 2, 2, numpy.random.default_rng(0)
        )
        with self.assertRaises(ShapeError):
            layer(Tensor(numpy.zeros([5, 2])))


class TestGroupNormAndUnits(unittest.TestCase):
    def test_group_count_must_divide_channels(self):
        with self.assertRaises(ShapeError):
            layers.GroupNorm(6, groups=4)
        self.assertEqual(layers.GroupNorm(32).groups, 8)
        self.assertEqual(layers.GroupNorm(4).groups, 4)

    def test_group_norm_statistics(self):
        norm = layers.GroupNorm(8, groups=2)
        out = norm(Tensor(numpy.random.default_rng(0).normal(3.0, 2.0, size=(5, 8)))).data
        grouped = out.reshape(5, 2, 4)
        numpy.testing.assert_allclose(grouped.mean(axis=2), 0.0, atol=1e-12)
        numpy.testing.assert_allclose(grouped.var(axis=2), 1.0, atol=1e-4)

    def test_unit_order_is_norm_relu_conv(self):
        rng = numpy.random.default_rng(4)
        adjacency = dcgnet.build_adjacency(dcgnet.icosahedron())
        unit = layers.GCNUnit(adjacency, 4, 4, rng, adaptive=False, groups=2)
        x = rng.normal(size=(12, 4))
        normalized = autodiff.group_norm(Tensor(x), 2).data
        expected = adjacency.dense() @ numpy.maximum(normalized, 0.0) @ unit.conv.weight.data
        numpy.testing.assert_allclose(unit(Tensor(x)).data, expected, atol=1e-12)

    def test_unit_gradients(self):
        rng = numpy.random.default_rng(8)
        adjacency = dcgnet.build_adjacency(dcgnet.icosahedron())
        unit = layers.GCNUnit(adjacency, 4, 4, rng, groups=2)
        x = Tensor(rng.normal(size=(12, 4)))
        weights = Tensor(rng.normal(size=(12, 4)))
        result = check_gradients(
            lambda: autodiff.sum(autodiff.mul(unit(x), weights)), unit.named_parameters()
        )
        self.assertTrue(result.passed, result.failures)


class TestAttention(unittest.TestCase):
    def test_graph_attention_coefficients_match_oracle(self):
        rng = numpy.random.default_rng(11)
        adjacency = dcgnet.build_adjacency(dcgnet.icosahedron())
        attention = layers.GraphAttention(5, 3, rng)
        x = rng.normal(size=(12, 5))
        coefficients, wh = attention.coefficients(Tensor(x), adjacency)

        h = x @ attention.weight.data
        a = attention.attention.data[:, 0]
        structure = adjacency.structure(True)
        expected = numpy.zeros([12, 12])
        for i in range(12):
            scores = {}
            for j in range(12):
                if structure[i, j]:
                    scores[j] = numpy.exp(_leaky(a[:3] @ h[i] + a[3:] @ h[j]))
            total = sum(scores.values())
            for j, value in scores.items():
                expected[i, j] = value / total
        numpy.testing.assert_allclose(coefficients.data, expected, atol=1e-10)
        numpy.testing.assert_allclose(wh.data, h, atol=1e-12)
        numpy.testing.assert_allclose(
            attention(Tensor(x), adjacency).data, expected @ h, atol=1e-10
        )

    def test_isolated_nodes_attend_to_themselves(self):
        rng = numpy.random.default_rng(0)
        identity = NormalizedAdjacency(scipy.sparse.identity(4, format="csr"), True, "none")
        attention = layers.GraphAttention(3, 2, rng)
        x = rng.normal(size=(4, 3))
        coefficients, _ = attention.coefficients(Tensor(x), identity)
        numpy.testing.assert_array_equal(coefficients.data, numpy.eye(4))
        numpy.testing.assert_allclose(
            attention(Tensor(x), identity).data, x @ attention.weight.data, atol=1e-12
        )

    def test_non_local_block_matches_oracle(self):
        rng = numpy.random.default_rng(12)
        block = layers.NonLocalBlock(6, rng)
        block.out.data[:] = rng.normal(size=block.out.shape)
        x = rng.normal(size=(7, 6))
        queries, keys, values = x @ block.theta.data, x @ block.phi.data, x @ block.g.data
        expected = x.copy()
        for i in range(7):
            logits = numpy.array([queries[i] @ keys[j] for j in range(7)])
            weights = numpy.exp(logits - logits.max())
            weights /= weights.sum()
            expected[i] += (weights @ values) @ block.out.data
        numpy.testing.assert_allclose(block(Tensor(x)).data, expected, atol=1e-10)
        numpy.testing.assert_allclose(block.attention(Tensor(x)).data.sum(axis=1), 1.0)

    def test_non_local_block_starts_as_identity(self):
        rng = numpy.random.default_rng(0)
        block = layers.NonLocalBlock(4, rng)
        x = rng.normal(size=(5, 4))
        numpy.testing.assert_array_equal(block(Tensor(x)).data, x)
        self.assertEqual(block.theta.shape, (4, 2))

    def test_fully_connected(self):
        rng = numpy.random.default_rng(0)
        fc = layers.FullyConnected(3, 2, rng)
        fc.bias.data[:] = [[1.0, -1.0]]
        x = rng.normal(size=(4, 3))
        numpy.testing.assert_allclose(
            fc(Tensor(x)).data, x @ fc.weight.data + [[1.0, -1.0]], atol=1e-12
        )
        bound = numpy.sqrt(6.0 / 5.0)
        self.assertTrue((numpy.abs(fc.weight.data) <= bound).all())
