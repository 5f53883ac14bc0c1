import doctest
import unittest

import numpy
import numpy.testing
import scipy.sparse
from hypothesis import given, settings, strategies

import dcgnet.autodiff
from dcgnet import autodiff
from dcgnet.autodiff import Tensor
from dcgnet.errors import ShapeError
from dcgnet.gradcheck import check_gradients


def load_tests(loader, tests, ignore):
    tests.addTests(doctest.DocTestSuite(dcgnet.autodiff))
    return tests


def _weighted(output: Tensor, rng: numpy.random.Generator) -> Tensor:
    weights = autodiff.constant(rng.normal(size=output.shape))
    if output.data.ndim == 0:
        return autodiff.scale(output, float(weights.data))
    return autodiff.sum(autodiff.mul(output, weights))


class TestOperationGradients(unittest.TestCase):
    """Central differences against backpropagation for every operation"""

    def _check(self, build, *shapes, seed=0):
        rng = numpy.random.default_rng(seed)
        inputs = {}
        for i, shape in enumerate(shapes):
            inputs["x" + str(i)] = Tensor(rng.normal(size=shape), requires_grad=True)
        out_rng_seed = int(rng.integers(1 << 30))
        result = check_gradients(
            lambda: _weighted(build(*inputs.values()), numpy.random.default_rng(out_rng_seed)),
            inputs,
        )
        self.assertTrue(result.passed, result.failures)
        self.assertGreater(result.checked, 0)

    @settings(max_examples=10, deadline=None)
    @given(strategies.integers(min_value=0, max_value=10_000))
    def test_matmul(self, seed):
        self._check(autodiff.matmul, (4, 3), (3, 5), seed=seed)

    def test_sparse_matmul(self):
        s = scipy.sparse.random(5, 4, density=0.5, random_state=1, format="csr")
        self._check(lambda x: autodiff.sparse_matmul(s, x), (4, 3))

    def test_elementwise(self):
        self._check(autodiff.add, (4, 3), (4, 3))
        self._check(autodiff.sub, (4, 3), (1, 3))
        self._check(autodiff.mul, (4, 3), (4, 3))
        self._check(autodiff.mul, (4, 3), (1, 3))
        self._check(lambda x: autodiff.scale(x, -2.5), (4, 3))

    def test_activations(self):
        self._check(autodiff.relu, (5, 4), seed=3)
        self._check(autodiff.leaky_relu, (5, 4), seed=4)
        self._check(autodiff.sigmoid, (5, 4))

    def test_softmax(self):
        self._check(autodiff.softmax_rows, (4, 6))
        mask = numpy.eye(4, 6, dtype=bool) | numpy.eye(4, 6, k=1, dtype=bool)
        self._check(lambda x: autodiff.softmax_rows(x, mask), (4, 6))

    def test_shape_operations(self):
        self._check(lambda a, b: autodiff.concat_cols([a, b, a]), (3, 2), (3, 4))
        self._check(autodiff.transpose, (3, 5))
        self._check(lambda x: autodiff.reshape(x, (6, 2)), (3, 4))
        self._check(lambda x: autodiff.slice_rows(x, [2, 0, 2]), (4, 3))
        self._check(lambda x: autodiff.slice_cols(x, 1, 3), (4, 5))
        self._check(autodiff.outer_add, (4, 1), (3, 1))

    def test_group_norm(self):
        self._check(lambda x: autodiff.group_norm(x, 2), (3, 8))
        self._check(lambda x: autodiff.group_norm(x, 1), (3, 4))

    def test_reductions(self):
        self._check(autodiff.sum, (3, 4))
        self._check(autodiff.mean, (3, 4))
        self._check(autodiff.l1_norm, (3, 4))
        self._check(autodiff.l2_norm, (3, 4))
        self._check(autodiff.abs, (3, 4))


class TestEngine(unittest.TestCase):
    def test_shared_subexpression_accumulates(self):
        x = Tensor([[2.0]], requires_grad=True)
        y = autodiff.mul(x, x)
        loss = autodiff.sum(autodiff.add(y, y))
        autodiff.backward(loss)
        # d(2 x^2)/dx = 4 x
        numpy.testing.assert_allclose(x.grad, [[8.0]])

    def test_gradients_accumulate_until_zeroed(self):
        w = Tensor([[1.0, 2.0]], requires_grad=True)
        for _ in range(2):
            autodiff.backward(autodiff.sum(w))
        numpy.testing.assert_allclose(w.grad, [[2.0, 2.0]])
        w.zero_grad()
        numpy.testing.assert_allclose(w.grad, [[0.0, 0.0]])

    def test_operator_overloads(self):
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[3.0], [4.0]])
        numpy.testing.assert_allclose((a @ b).data, [[11.0]])
        numpy.testing.assert_allclose((a + a - a * a).data, [[1.0, 0.0]])
        numpy.testing.assert_allclose((-a).data, [[-1.0, -2.0]])

    def test_constants_are_not_tracked(self):
        x = autodiff.constant(numpy.ones([2, 2]))
        y = autodiff.relu(x)
        self.assertFalse(y.requires_grad)
        self.assertTrue(y.is_leaf)
        autodiff.backward(autodiff.sum(y))
        self.assertIsNone(x.grad)

    def test_tape_is_topological(self):
        x = Tensor([[1.0, -1.0]], requires_grad=True)
        h = autodiff.relu(x)
        loss = autodiff.sum(autodiff.add(h, x))
        tape = autodiff.Tape.record(loss)
        position = {id(node): i for i, node in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node._parents:
                self.assertLess(position[id(parent)], position[id(node)])
        self.assertIs(tape.nodes[-1], loss)

    def test_deep_graph_does_not_recurse(self):
        x = Tensor([[1.0]], requires_grad=True)
        y = x
        for _ in range(5000):
            y = autodiff.scale(y, 1.0)
        autodiff.backward(autodiff.sum(y))
        numpy.testing.assert_allclose(x.grad, [[1.0]])

    def test_shape_errors_name_the_operation(self):
        with self.assertRaises(ShapeError) as context:
            autodiff.matmul(Tensor(numpy.ones([2, 3])), Tensor(numpy.ones([2, 3])))
        self.assertIn("matmul", str(context.exception))
        with self.assertRaises(ShapeError):
            autodiff.add(Tensor(numpy.ones([2, 3])), Tensor(numpy.ones([3, 3])))
        with self.assertRaises(ShapeError):
            autodiff.backward(Tensor(numpy.ones([2, 2]), requires_grad=True))
        with self.assertRaises(ShapeError):
            autodiff.group_norm(Tensor(numpy.ones([2, 6])), 4)

    def test_masked_softmax_zeroes_excluded_entries(self):
        mask = numpy.array([[True, False, True], [False, True, False]])
        y = autodiff.softmax_rows(Tensor(numpy.zeros([2, 3])), mask)
        numpy.testing.assert_allclose(y.data, [[0.5, 0.0, 0.5], [0.0, 1.0, 0.0]])
        with self.assertRaises(ShapeError):
            autodiff.softmax_rows(Tensor(numpy.zeros([1, 2])), numpy.zeros([1, 2], dtype=bool))

    def test_group_norm_oracle(self):
        x = numpy.random.default_rng(7).normal(size=(3, 6))
        y = autodiff.group_norm(Tensor(x), 2, eps=0.0).data
        for row in range(3):
            for group in range(2):
                block = x[row, 3 * group : 3 * group + 3]
                expected = (block - block.mean()) / block.std()
                numpy.testing.assert_allclose(y[row, 3 * group : 3 * group + 3], expected, atol=1e-12)
