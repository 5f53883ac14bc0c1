"""Trainable building blocks over mesh graphs.

A layer owns its parameters as :class:`~dcgnet.autodiff.Tensor` attributes and
exposes them by dotted name through :meth:`Layer.named_parameters`, in attribute
order, so the same construction sequence always produces the same names.

Examples
--------
A graph convolution with self loops only and an identity weight passes
non-negative input through unchanged

>>> import numpy
>>> import scipy.sparse
>>> from dcgnet import autodiff, layers
>>> from dcgnet.mesh import NormalizedAdjacency
>>> identity = NormalizedAdjacency(scipy.sparse.identity(3, format="csr"), True, "none")
>>> layer = layers.GraphConvLayer(identity, 2, 2, numpy.random.default_rng(0))
>>> layer.weight.data[:] = numpy.eye(2)
>>> x = autodiff.Tensor([[1.0, 2.0], [0.0, 3.0], [4.0, 0.5]])
>>> layer(x).data.tolist()
[[1.0, 2.0], [0.0, 3.0], [4.0, 0.5]]
"""

import math
from typing import Literal, Optional, Union

import numpy
from numpy.typing import NDArray

from dcgnet import autodiff
from dcgnet.autodiff import Tensor
from dcgnet.errors import ShapeError
from dcgnet.mesh import NormalizedAdjacency

Activation = Optional[Literal["relu"]]
"""Type: Activation applied after a graph convolution, None for linear output"""


def glorot(rng: numpy.random.Generator, rows: int, cols: int) -> NDArray[float]:
    """
    Uniform initialization in ±sqrt(6 / (rows + cols))

    Parameters
    ----------
    rng: numpy.random.Generator
        Source of randomness
    rows: int
        Input features
    cols: int
        Output features

    Returns
    -------
    NDArray[float]
        A (rows, cols) array
    """
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def _activate(x: Tensor, activation: Activation) -> Tensor:
    if activation is None:
        return x
    if activation == "relu":
        return autodiff.relu(x)
    raise ValueError("Unknown activation " + str(activation))


class Layer(object):
    """Base class that discovers parameters held by a layer and its sublayers"""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        """
        Trainable tensors by dotted name

        A tensor shared between sublayers is listed once, under the first name it
        is reached by.

        Parameters
        ----------
        prefix: str, default=""
            Prepended to every name

        Returns
        -------
        dict[str, Tensor]
            Every tensor with `requires_grad` set
        """
        found: dict[str, Tensor] = {}
        seen: set[int] = set()
        self._collect(prefix, found, seen)
        return found

    def _collect(self, prefix: str, found: dict, seen: set) -> None:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            path = prefix + name
            if isinstance(value, Tensor):
                if value.requires_grad and id(value) not in seen:
                    seen.add(id(value))
                    found[path] = value
            elif isinstance(value, Layer):
                value._collect(path + ".", found, seen)
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Layer):
                        item._collect(path + "." + str(index) + ".", found, seen)
                    elif isinstance(item, list):
                        for inner, sub in enumerate(item):
                            if isinstance(sub, Layer):
                                sub._collect(
                                    path + "." + str(index) + "." + str(inner) + ".",
                                    found,
                                    seen,
                                )

    def parameter_count(self) -> int:
        """
        Number of trainable scalars

        Returns
        -------
        int
            Total size of all trainable tensors
        """
        return int(sum(p.data.size for p in self.named_parameters().values()))

    def zero_grad(self) -> None:
        """Reset the gradients of every trainable tensor"""
        for parameter in self.named_parameters().values():
            parameter.zero_grad()

    def __call__(self, *args, **kwargs) -> Tensor:
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs) -> Tensor:
        raise NotImplementedError


class FullyConnected(Layer):
    """
    Per-node affine map x W + b shared by all nodes

    Parameters
    ----------
    in_features: int
        Input channels
    out_features: int
        Output channels
    rng: numpy.random.Generator
        Source of the Glorot initialization

    Attributes
    ----------
    weight: Tensor
        (in_features, out_features)
    bias: Tensor
        (1, out_features), initialized to zero
    """

    def __init__(self, in_features: int, out_features: int, rng: numpy.random.Generator):
        self.weight = Tensor(glorot(rng, in_features, out_features), requires_grad=True)
        self.bias = Tensor(numpy.zeros([1, out_features]), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return autodiff.add(autodiff.matmul(x, self.weight), self.bias)


class GraphConvLayer(Layer):
    """
    Graph convolution σ(A X W) with a fixed adjacency

    Parameters
    ----------
    adjacency: NormalizedAdjacency
        The fixed (N, N) matrix A
    in_features: int
        Input channels k
    out_features: int
        Output channels h
    rng: numpy.random.Generator
        Source of the Glorot initialization
    activation: "relu" or None, default="relu"
        σ
    vertex_bias: bool, default=False
        Whether an (N, h) bias is added before the activation

    Attributes
    ----------
    weight: Tensor
        (k, h) weight W
    bias: Tensor or None
        Per-vertex bias when requested
    """

    def __init__(
        self,
        adjacency: NormalizedAdjacency,
        in_features: int,
        out_features: int,
        rng: numpy.random.Generator,
        activation: Activation = "relu",
        vertex_bias: bool = False,
    ):
        self._adjacency = adjacency
        self._dense = autodiff.constant(adjacency.dense())
        self.activation = activation
        self.weight = Tensor(glorot(rng, in_features, out_features), requires_grad=True)
        self.bias = (
            Tensor(numpy.zeros([adjacency.size, out_features]), requires_grad=True)
            if vertex_bias
            else None
        )

    @property
    def adjacency(self) -> NormalizedAdjacency:
        """NormalizedAdjacency: The fixed matrix A"""
        return self._adjacency

    def forward(self, x: Tensor) -> Tensor:
        return gcn_forward(self, x)


class AdaptiveAdjacency(Layer):
    """
    Learnable adjacency Â = A + R with the residual R initialized to the identity

    Parameters
    ----------
    base: NormalizedAdjacency
        The connectivity A the matrix starts from
    trainable: bool, default=True
        Whether R receives gradients; a frozen residual stays the identity

    Attributes
    ----------
    learned: Tensor
        The dense (N, N) residual R, free to take either sign
    """

    def __init__(self, base: NormalizedAdjacency, trainable: bool = True):
        self._base = base
        self._base_dense = autodiff.constant(base.dense())
        self.learned = Tensor(numpy.eye(base.size), requires_grad=trainable)

    @property
    def base(self) -> NormalizedAdjacency:
        """NormalizedAdjacency: The connectivity A"""
        return self._base

    @property
    def size(self) -> int:
        """int: Number of graph nodes"""
        return self._base.size

    def effective(self) -> Tensor:
        """
        The matrix used by the convolution

        Returns
        -------
        Tensor
            A + R, differentiable with respect to R
        """
        return autodiff.add(self._base_dense, self.learned)

    def dense(self) -> NDArray[float]:
        """
        Current value of A + R

        Returns
        -------
        NDArray[float]
            A new (N, N) array
        """
        return self._base_dense.data + self.learned.data


class AdaptiveGraphConvLayer(Layer):
    """
    Graph convolution σ(Â X W) over a learnable adjacency

    Parameters
    ----------
    adjacency: AdaptiveAdjacency or NormalizedAdjacency
        The adjacency to learn; a plain adjacency gets a fresh residual, an
        AdaptiveAdjacency is used as given and may be shared between layers
    in_features: int
        Input channels k
    out_features: int
        Output channels h
    rng: numpy.random.Generator
        Source of the Glorot initialization
    activation: "relu" or None, default="relu"
        σ
    trainable_adjacency: bool, default=True
        Whether a fresh residual receives gradients

    Attributes
    ----------
    adjacency: AdaptiveAdjacency
        Â
    weight: Tensor
        (k, h) weight W
    """

    def __init__(
        self,
        adjacency: Union[AdaptiveAdjacency, NormalizedAdjacency],
        in_features: int,
        out_features: int,
        rng: numpy.random.Generator,
        activation: Activation = "relu",
        trainable_adjacency: bool = True,
    ):
        if isinstance(adjacency, NormalizedAdjacency):
            adjacency = AdaptiveAdjacency(adjacency, trainable=trainable_adjacency)
        self.adjacency = adjacency
        self.activation = activation
        self.weight = Tensor(glorot(rng, in_features, out_features), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return adaptive_gcn_forward(self, x)


class GroupNorm(Layer):
    """
    Group normalization of the channels of every node with a per-channel affine map

    Parameters
    ----------
    channels: int
        Channel count C
    groups: int, optional
        Group count, defaults to min(8, C)
    eps: float, default=1e-5
        Variance offset

    Attributes
    ----------
    gain: Tensor
        (1, C), initialized to one
    bias: Tensor
        (1, C), initialized to zero
    """

    def __init__(self, channels: int, groups: Optional[int] = None, eps: float = 1e-5):
        groups = min(8, channels) if groups is None else groups
        if groups < 1 or channels % groups:
            raise ShapeError(
                "group_norm (groups must divide channels)", (channels,), (groups,)
            )
        self.groups = groups
        self.eps = eps
        self.gain = Tensor(numpy.ones([1, channels]), requires_grad=True)
        self.bias = Tensor(numpy.zeros([1, channels]), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        normalized = autodiff.group_norm(x, self.groups, self.eps)
        return autodiff.add(autodiff.mul(normalized, self.gain), self.bias)


class GCNUnit(Layer):
    """
    GroupNorm, then ReLU, then a linear graph convolution

    Parameters
    ----------
    adjacency: NormalizedAdjacency or AdaptiveAdjacency
        Graph of the level the unit runs on
    in_features: int
        Input channels, must be divisible by the group count
    out_features: int
        Output channels
    rng: numpy.random.Generator
        Source of the Glorot initialization
    adaptive: bool, default=True
        Use an adaptive convolution; otherwise a fixed one
    trainable_adjacency: bool, default=True
        For an adaptive convolution, whether its residual is learned
    groups: int, optional
        GroupNorm group count, defaults to min(8, in_features)

    Attributes
    ----------
    norm: GroupNorm
        The normalization
    conv: GraphConvLayer or AdaptiveGraphConvLayer
        The convolution, without activation
    """

    def __init__(
        self,
        adjacency: Union[NormalizedAdjacency, AdaptiveAdjacency],
        in_features: int,
        out_features: int,
        rng: numpy.random.Generator,
        adaptive: bool = True,
        trainable_adjacency: bool = True,
        groups: Optional[int] = None,
    ):
        self.norm = GroupNorm(in_features, groups)
        if adaptive:
            self.conv = AdaptiveGraphConvLayer(
                adjacency,
                in_features,
                out_features,
                rng,
                activation=None,
                trainable_adjacency=trainable_adjacency,
            )
        else:
            if isinstance(adjacency, AdaptiveAdjacency):
                adjacency = adjacency.base
            self.conv = GraphConvLayer(
                adjacency, in_features, out_features, rng, activation=None
            )

    def forward(self, x: Tensor) -> Tensor:
        return gcn_unit_forward(self, x)


class GraphAttention(Layer):
    """
    Single-head graph attention restricted to mesh neighborhoods

    Parameters
    ----------
    in_features: int
        Input channels h
    out_features: int
        Transformed channels p
    rng: numpy.random.Generator
        Source of the Glorot initialization
    slope: float, default=0.2
        Negative slope of the LeakyReLU applied to scores

    Attributes
    ----------
    weight: Tensor
        Shared (h, p) transform W
    attention: Tensor
        (2p, 1) attention vector, the first half scores the receiving node and the
        second half the sending node
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: numpy.random.Generator,
        slope: float = 0.2,
    ):
        self.slope = slope
        self.weight = Tensor(glorot(rng, in_features, out_features), requires_grad=True)
        self.attention = Tensor(glorot(rng, 2 * out_features, 1), requires_grad=True)

    def coefficients(
        self, x: Tensor, adjacency: NormalizedAdjacency
    ) -> tuple[Tensor, Tensor]:
        """
        Attention coefficients and transformed features

        Parameters
        ----------
        x: Tensor
            (N, h) node features
        adjacency: NormalizedAdjacency
            Neighborhoods the attention is restricted to, self included

        Returns
        -------
        tuple[Tensor, Tensor]
            The row-stochastic (N, N) coefficients E and the (N, p) product x W
        """
        if x.shape[0] != adjacency.size:
            raise ShapeError("graph_attention", x.shape, adjacency.matrix.shape)
        p = self.weight.shape[1]
        wh = autodiff.matmul(x, self.weight)
        receiving = autodiff.matmul(wh, autodiff.slice_rows(self.attention, slice(0, p)))
        sending = autodiff.matmul(wh, autodiff.slice_rows(self.attention, slice(p, 2 * p)))
        scores = autodiff.leaky_relu(autodiff.outer_add(receiving, sending), self.slope)
        return autodiff.softmax_rows(scores, mask=adjacency.structure(True)), wh

    def forward(self, x: Tensor, adjacency: NormalizedAdjacency) -> Tensor:
        return graph_attention_forward(self, x, adjacency)


class NonLocalBlock(Layer):
    """
    Embedded-Gaussian self attention over all nodes with a residual connection

    Parameters
    ----------
    channels: int
        Channel count h of input and output
    rng: numpy.random.Generator
        Source of the Glorot initialization
    inner_channels: int, optional
        Width h' of the embeddings, defaults to max(1, h // 2)

    Attributes
    ----------
    theta: Tensor
        (h, h') query embedding
    phi: Tensor
        (h, h') key embedding
    g: Tensor
        (h, h') value embedding
    out: Tensor
        (h', h) output projection, initialized to zero so the block starts as the
        identity
    """

    def __init__(
        self,
        channels: int,
        rng: numpy.random.Generator,
        inner_channels: Optional[int] = None,
    ):
        inner = max(1, channels // 2) if inner_channels is None else inner_channels
        self.theta = Tensor(glorot(rng, channels, inner), requires_grad=True)
        self.phi = Tensor(glorot(rng, channels, inner), requires_grad=True)
        self.g = Tensor(glorot(rng, channels, inner), requires_grad=True)
        self.out = Tensor(numpy.zeros([inner, channels]), requires_grad=True)

    def attention(self, x: Tensor) -> Tensor:
        """
        Pairwise attention between all nodes

        Parameters
        ----------
        x: Tensor
            (N, h) node features

        Returns
        -------
        Tensor
            Row-stochastic (N, N) softmax of θ(x) φ(x)ᵀ
        """
        queries = autodiff.matmul(x, self.theta)
        keys = autodiff.matmul(x, self.phi)
        return autodiff.softmax_rows(
            autodiff.matmul(queries, autodiff.transpose(keys))
        )

    def forward(self, x: Tensor) -> Tensor:
        return non_local_forward(self, x)


def gcn_forward(layer: GraphConvLayer, x: Tensor) -> Tensor:
    """
    Fixed graph convolution

    Parameters
    ----------
    layer: GraphConvLayer
        The layer
    x: Tensor
        (N, k) node features

    Returns
    -------
    Tensor
        σ(A x W), plus the vertex bias when the layer has one
    """
    if x.shape[0] != layer.adjacency.size:
        raise ShapeError("gcn_forward", x.shape, layer.adjacency.matrix.shape)
    out = autodiff.matmul(autodiff.matmul(layer._dense, x), layer.weight)
    if layer.bias is not None:
        out = autodiff.add(out, layer.bias)
    return _activate(out, layer.activation)


def adaptive_gcn_forward(layer: AdaptiveGraphConvLayer, x: Tensor) -> Tensor:
    """
    Adaptive graph convolution

    Parameters
    ----------
    layer: AdaptiveGraphConvLayer
        The layer
    x: Tensor
        (N, k) node features

    Returns
    -------
    Tensor
        σ(Â x W)
    """
    if x.shape[0] != layer.adjacency.size:
        raise ShapeError(
            "adaptive_gcn_forward", x.shape, (layer.adjacency.size, layer.adjacency.size)
        )
    out = autodiff.matmul(
        autodiff.matmul(layer.adjacency.effective(), x), layer.weight
    )
    return _activate(out, layer.activation)


def gcn_unit_forward(unit: GCNUnit, x: Tensor) -> Tensor:
    """GroupNorm, ReLU and convolution, in that order"""
    return unit.conv(autodiff.relu(unit.norm(x)))


def graph_attention_forward(
    att: GraphAttention, x: Tensor, adjacency: NormalizedAdjacency
) -> Tensor:
    """
    Masked graph attention

    Parameters
    ----------
    att: GraphAttention
        The layer
    x: Tensor
        (N, h) node features
    adjacency: NormalizedAdjacency
        Neighborhoods

    Returns
    -------
    Tensor
        E x W, shape (N, p)
    """
    coefficients, wh = att.coefficients(x, adjacency)
    return autodiff.matmul(coefficients, wh)


def non_local_forward(block: NonLocalBlock, x: Tensor) -> Tensor:
    """x + softmax(θ(x) φ(x)ᵀ) g(x) out"""
    values = autodiff.matmul(x, block.g)
    attended = autodiff.matmul(block.attention(x), values)
    return autodiff.add(x, autodiff.matmul(attended, block.out))
