"""Dense tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output adjoint to parent adjoints. :func:`backward` records
the reachable graph into a :class:`Tape` in topological order and walks it in
reverse. All values are 64-bit floats. The only broadcasting is a (1, m) row
vector combined with every row of an (n, m) operand.

Examples
--------
>>> import numpy
>>> from dcgnet import autodiff
>>> w = autodiff.Tensor([[1.0, -2.0], [3.0, 0.5]], requires_grad=True)
>>> x = autodiff.Tensor(numpy.eye(2))
>>> loss = autodiff.sum(autodiff.relu(autodiff.matmul(x, w)))
>>> float(loss.data)
4.5
>>> autodiff.backward(loss)
>>> w.grad.tolist()
[[1.0, 0.0], [1.0, 1.0]]
"""

import dataclasses
from typing import Callable, Optional, Sequence, Union

import numpy
import scipy.special
from numpy.typing import NDArray

from dcgnet.errors import ShapeError
from dcgnet.mesh import SparseMatrix

BackwardFunction = Callable[[NDArray[float]], tuple]
"""Type: Maps the adjoint of an output to the adjoints of its parents"""


class Tensor(object):
    """A real-valued array that can take part in differentiation

    Parameters
    ----------
    data: array-like
        The values, copied and stored as float64
    requires_grad: bool, default=False
        Whether gradients are accumulated into this tensor

    Attributes
    ----------
    data: NDArray[float]
        The values
    requires_grad: bool
        Whether gradients are accumulated into this tensor
    grad: NDArray[float] or None
        Accumulated gradient, same shape as `data`
    op: str
        Name of the operation that produced the tensor, empty for leaves
    """

    def __init__(self, data, requires_grad: bool = False):
        self.data: NDArray[float] = numpy.array(data, dtype=numpy.float64)
        self.requires_grad: bool = requires_grad
        self.grad: Optional[NDArray[float]] = (
            numpy.zeros_like(self.data) if requires_grad else None
        )
        self.op: str = ""
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFunction] = None

    @classmethod
    def _result(
        cls,
        value: NDArray[float],
        parents: Sequence["Tensor"],
        backward_function: BackwardFunction,
        op: str,
    ) -> "Tensor":
        out = cls.__new__(cls)
        out.data = numpy.asarray(value, dtype=numpy.float64)
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.op = op
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward_function
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        """tuple[int, ...]: Dimensions of the tensor"""
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        """bool: True if the tensor was not produced by a tracked operation"""
        return not self._parents

    def zero_grad(self) -> None:
        """Reset the accumulated gradient to zero"""
        if self.requires_grad:
            self.grad = numpy.zeros_like(self.data)

    def numpy(self) -> NDArray[float]:
        """
        A copy of the values

        Returns
        -------
        NDArray[float]
            The tensor values
        """
        return self.data.copy()

    def backward(self) -> None:
        """Backpropagate from this scalar tensor, see :func:`backward`"""
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return (
            "Tensor(shape="
            + str(self.shape)
            + (", op=" + self.op if self.op else "")
            + (", requires_grad=True" if self.requires_grad else "")
            + ")"
        )


@dataclasses.dataclass
class Tape:
    """Tensors reachable from a root, every tensor listed after its parents

    Attributes
    ----------
    nodes: list[Tensor]
        Tensors that require gradients, in topological order
    """

    nodes: list[Tensor]

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        """
        Collect the differentiable graph below a tensor

        Parameters
        ----------
        root: Tensor
            The output whose ancestors are recorded

        Returns
        -------
        Tape
            The recorded graph, ending with `root`
        """
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """
    Accumulate d(loss)/d(t) into `t.grad` for every tensor t the loss depends on

    Gradients add up over repeated calls until :meth:`Tensor.zero_grad`.

    Parameters
    ----------
    loss: Tensor
        A tensor holding a single value

    Returns
    -------
    None
    """
    if loss.data.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    if not loss.requires_grad:
        return

    tape = Tape.record(loss)
    adjoints: dict[int, NDArray[float]] = {id(loss): numpy.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        adjoint = adjoints.pop(id(node), None)
        if adjoint is None:
            continue
        if node.grad is None:
            node.grad = adjoint.copy()
        else:
            node.grad += adjoint
        if node._backward is None:
            continue
        for parent, parent_adjoint in zip(node._parents, node._backward(adjoint)):
            if parent_adjoint is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + parent_adjoint
            else:
                adjoints[key] = parent_adjoint


def constant(data) -> Tensor:
    """
    Wrap values that never receive gradients

    Parameters
    ----------
    data: array-like
        The values

    Returns
    -------
    Tensor
        A tensor with `requires_grad` False
    """
    return data if isinstance(data, Tensor) else Tensor(data)


def _require_2d(op: str, *tensors: Tensor) -> None:
    for t in tensors:
        if t.data.ndim != 2:
            raise ShapeError(op, *[x.shape for x in tensors])


def _broadcast_kind(op: str, a: Tensor, b: Tensor) -> bool:
    """True if b is a row vector broadcast over the rows of a"""
    if a.shape == b.shape:
        return False
    if a.data.ndim == 2 and b.shape == (1, a.shape[1]):
        return True
    raise ShapeError(op, a.shape, b.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of two 2-D tensors

    Parameters
    ----------
    a: Tensor
        Left operand, shape (n, k)
    b: Tensor
        Right operand, shape (k, m)

    Returns
    -------
    Tensor
        The (n, m) product
    """
    _require_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward_function(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return Tensor._result(a.data @ b.data, (a, b), backward_function, "matmul")


def sparse_matmul(s: SparseMatrix, x: Tensor) -> Tensor:
    """
    Product of a constant sparse matrix and a tensor

    Parameters
    ----------
    s: SparseMatrix
        Constant (n, k) matrix, no gradient flows into it
    x: Tensor
        Shape (k, m)

    Returns
    -------
    Tensor
        The (n, m) product
    """
    _require_2d("sparse_matmul", x)
    if s.shape[1] != x.shape[0]:
        raise ShapeError("sparse_matmul", s.shape, x.shape)
    transposed = s.T.tocsr()

    def backward_function(g):
        return (numpy.asarray(transposed @ g),)

    return Tensor._result(
        numpy.asarray(s @ x.data), (x,), backward_function, "sparse_matmul"
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    """
    Elementwise sum; `b` may be a (1, m) row vector added to every row of `a`

    Parameters
    ----------
    a: Tensor
        First operand
    b: Tensor
        Second operand, same shape as `a` or a row vector

    Returns
    -------
    Tensor
        The sum, shaped like `a`
    """
    row = _broadcast_kind("add", a, b)

    def backward_function(g):
        return g, (g.sum(axis=0, keepdims=True) if row else g)

    return Tensor._result(a.data + b.data, (a, b), backward_function, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    """
    Elementwise difference; `b` may be a (1, m) row vector

    Parameters
    ----------
    a: Tensor
        First operand
    b: Tensor
        Second operand, same shape as `a` or a row vector

    Returns
    -------
    Tensor
        a - b, shaped like `a`
    """
    row = _broadcast_kind("sub", a, b)

    def backward_function(g):
        return g, -(g.sum(axis=0, keepdims=True) if row else g)

    return Tensor._result(a.data - b.data, (a, b), backward_function, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """
    Elementwise product; `b` may be a (1, m) row vector of per-column gains

    Parameters
    ----------
    a: Tensor
        First operand
    b: Tensor
        Second operand, same shape as `a` or a row vector

    Returns
    -------
    Tensor
        The product, shaped like `a`
    """
    row = _broadcast_kind("mul", a, b)

    def backward_function(g):
        gb = g * a.data
        return g * b.data, (gb.sum(axis=0, keepdims=True) if row else gb)

    return Tensor._result(a.data * b.data, (a, b), backward_function, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    """
    Multiply by a constant

    Parameters
    ----------
    a: Tensor
        The tensor
    factor: float
        The constant

    Returns
    -------
    Tensor
        factor * a
    """

    def backward_function(g):
        return (g * factor,)

    return Tensor._result(a.data * factor, (a,), backward_function, "scale")


def relu(a: Tensor) -> Tensor:
    """Rectified linear unit, max(a, 0); the derivative at 0 is taken as 0"""
    positive = a.data > 0.0

    def backward_function(g):
        return (g * positive,)

    return Tensor._result(
        numpy.where(positive, a.data, 0.0), (a,), backward_function, "relu"
    )


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    """Leaky rectifier, a where a > 0 and slope * a elsewhere"""
    positive = a.data > 0.0

    def backward_function(g):
        return (numpy.where(positive, g, slope * g),)

    return Tensor._result(
        numpy.where(positive, a.data, slope * a.data),
        (a,),
        backward_function,
        "leaky_relu",
    )


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function 1 / (1 + exp(-a))"""
    y = scipy.special.expit(a.data)

    def backward_function(g):
        return (g * y * (1.0 - y),)

    return Tensor._result(y, (a,), backward_function, "sigmoid")


def softmax_rows(a: Tensor, mask: Optional[NDArray[bool]] = None) -> Tensor:
    """
    Softmax over every row of a 2-D tensor

    Parameters
    ----------
    a: Tensor
        Scores, shape (n, m)
    mask: NDArray[bool], optional
        Entries that take part in the softmax; masked-out entries get probability
        zero. Every row needs at least one allowed entry.

    Returns
    -------
    Tensor
        Row-stochastic (n, m) tensor
    """
    _require_2d("softmax_rows", a)
    if mask is None:
        shifted = a.data - a.data.max(axis=1, keepdims=True)
        e = numpy.exp(shifted)
    else:
        mask = numpy.asarray(mask, dtype=bool)
        if mask.shape != a.shape or not mask.any(axis=1).all():
            raise ShapeError("softmax_rows (mask)", a.shape, mask.shape)
        row_max = numpy.where(mask, a.data, -numpy.inf).max(axis=1, keepdims=True)
        e = numpy.where(mask, numpy.exp(numpy.where(mask, a.data - row_max, 0.0)), 0.0)
    y = e / e.sum(axis=1, keepdims=True)

    def backward_function(g):
        return (y * (g - numpy.sum(g * y, axis=1, keepdims=True)),)

    return Tensor._result(y, (a,), backward_function, "softmax_rows")


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """
    Concatenate 2-D tensors with equal row counts along the feature axis

    Parameters
    ----------
    tensors: Sequence[Tensor]
        At least one tensor

    Returns
    -------
    Tensor
        Shape (n, sum of column counts)
    """
    _require_2d("concat_cols", *tensors)
    if len({t.shape[0] for t in tensors}) != 1:
        raise ShapeError("concat_cols", *[t.shape for t in tensors])
    bounds = numpy.cumsum([0] + [t.shape[1] for t in tensors])

    def backward_function(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return Tensor._result(
        numpy.concatenate([t.data for t in tensors], axis=1),
        tuple(tensors),
        backward_function,
        "concat_cols",
    )


def transpose(a: Tensor) -> Tensor:
    """Transpose of a 2-D tensor"""
    _require_2d("transpose", a)

    def backward_function(g):
        return (g.T,)

    return Tensor._result(a.data.T.copy(), (a,), backward_function, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    """
    Same values in a new shape, row-major order

    Parameters
    ----------
    a: Tensor
        The tensor
    shape: Sequence[int]
        New dimensions with the same total size

    Returns
    -------
    Tensor
        The reshaped tensor
    """
    if int(numpy.prod(shape)) != a.data.size:
        raise ShapeError("reshape", a.shape, tuple(shape))

    def backward_function(g):
        return (g.reshape(a.shape),)

    return Tensor._result(
        a.data.reshape(shape).copy(), (a,), backward_function, "reshape"
    )


def slice_rows(a: Tensor, index: Union[slice, Sequence[int], NDArray[int]]) -> Tensor:
    """
    Select rows of a 2-D tensor

    Parameters
    ----------
    a: Tensor
        The tensor
    index: slice or sequence of int
        Rows to keep, repetitions allowed

    Returns
    -------
    Tensor
        The selected rows
    """
    _require_2d("slice_rows", a)
    rows = numpy.arange(a.shape[0])[index]

    def backward_function(g):
        full = numpy.zeros_like(a.data)
        numpy.add.at(full, rows, g)
        return (full,)

    return Tensor._result(a.data[rows], (a,), backward_function, "slice_rows")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns start..stop-1 of a 2-D tensor"""
    _require_2d("slice_cols", a)
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError("slice_cols", a.shape, (start, stop))

    def backward_function(g):
        full = numpy.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return Tensor._result(
        a.data[:, start:stop].copy(), (a,), backward_function, "slice_cols"
    )


def outer_add(u: Tensor, v: Tensor) -> Tensor:
    """
    Pairwise sums of two column vectors

    Parameters
    ----------
    u: Tensor
        Shape (n, 1)
    v: Tensor
        Shape (m, 1)

    Returns
    -------
    Tensor
        Shape (n, m) with entry (i, j) equal to u_i + v_j
    """
    _require_2d("outer_add", u, v)
    if u.shape[1] != 1 or v.shape[1] != 1:
        raise ShapeError("outer_add", u.shape, v.shape)

    def backward_function(g):
        return g.sum(axis=1, keepdims=True), g.sum(axis=0).reshape(-1, 1)

    return Tensor._result(u.data + v.data.T, (u, v), backward_function, "outer_add")


def group_norm(x: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """
    Normalize the channels of every row within contiguous groups

    Parameters
    ----------
    x: Tensor
        Shape (n, c) with c divisible by `groups`
    groups: int
        Number of channel groups per row
    eps: float, default=1e-5
        Added to the variance

    Returns
    -------
    Tensor
        Zero-mean, unit-variance channels per (row, group), no affine transform
    """
    _require_2d("group_norm", x)
    n, c = x.shape
    if groups < 1 or c % groups:
        raise ShapeError("group_norm (groups must divide channels)", x.shape, (groups,))
    grouped = x.data.reshape(n * groups, c // groups)
    centered = grouped - grouped.mean(axis=1, keepdims=True)
    inv_std = 1.0 / numpy.sqrt(numpy.mean(centered**2, axis=1, keepdims=True) + eps)
    normalized = centered * inv_std

    def backward_function(g):
        gg = g.reshape(n * groups, c // groups)
        dx = inv_std * (
            gg
            - gg.mean(axis=1, keepdims=True)
            - normalized * numpy.mean(gg * normalized, axis=1, keepdims=True)
        )
        return (dx.reshape(n, c),)

    return Tensor._result(
        normalized.reshape(n, c), (x,), backward_function, "group_norm"
    )


def abs(a: Tensor) -> Tensor:
    """Elementwise absolute value; the derivative at 0 is taken as 0"""
    sign = numpy.sign(a.data)

    def backward_function(g):
        return (g * sign,)

    return Tensor._result(numpy.abs(a.data), (a,), backward_function, "abs")


def sum(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor"""

    def backward_function(g):
        return (numpy.full(a.shape, float(g)),)

    return Tensor._result(numpy.sum(a.data), (a,), backward_function, "sum")


def mean(a: Tensor) -> Tensor:
    """Mean of all entries, as a scalar tensor"""
    count = a.data.size

    def backward_function(g):
        return (numpy.full(a.shape, float(g) / count),)

    return Tensor._result(numpy.mean(a.data), (a,), backward_function, "mean")


def l1_norm(a: Tensor) -> Tensor:
    """Sum of absolute values of all entries, as a scalar tensor"""
    return sum(abs(a))


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm of all entries, as a scalar tensor; its gradient at 0 is 0"""
    norm = float(numpy.sqrt(numpy.sum(a.data**2)))

    def backward_function(g):
        if norm == 0.0:
            return (numpy.zeros_like(a.data),)
        return (float(g) * a.data / norm,)

    return Tensor._result(numpy.array(norm), (a,), backward_function, "l2_norm")
