"""The U-shaped graph network over a mesh hierarchy.

The encoder runs GCN units at every level and moves features to the next coarser
level through a fully connected layer and the down operator. A non-local block
processes one coarse level as a whole. Each decoder step upsamples its state one
level, combines it with attention-fused encoder features from all coarser levels
and the encoder skip of the same level, and runs GCN units again. A final head
emits three coordinates per level-0 node.

Decoder step l (1 <= l <= L) works at level t = L - l:

====  ====================  =================  ============
step  upsampled from level  fused enc. levels  skip level
====  ====================  =================  ============
1     L                     1                  L - 1
2     L - 1                 1, 2               L - 2
L     1                     1 .. L             0
====  ====================  =================  ============
"""

import dataclasses
import logging
from typing import Optional

import numpy
from numpy.typing import NDArray

from dcgnet import autodiff
from dcgnet.autodiff import Tensor
from dcgnet.coarsen import MeshHierarchy
from dcgnet.errors import CheckpointError, ShapeError
from dcgnet.layers import (
    AdaptiveAdjacency,
    FullyConnected,
    GCNUnit,
    GraphAttention,
    GraphConvLayer,
    GroupNorm,
    Layer,
    NonLocalBlock,
)

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class NetworkConfig:
    """Architecture of a :class:`DCGNet`

    Attributes
    ----------
    in_features: int, default=19
        Input channels per node, three coordinates plus the feature vector
    width: int, default=32
        Channels of every hidden level
    units_per_level: int, default=2
        GCN units per encoder level and per decoder level
    attention_features: int, default=16
        Transformed channels p of the fusion attention
    adaptive_adjacency: bool, default=True
        Learn the adjacency residuals; otherwise they stay frozen at the identity
    share_adjacency: bool, default=False
        Share one adaptive adjacency between all units of a level
    nonlocal_block: bool, default=True
        Whether the non-local block is used
    nonlocal_level: int, optional
        Level of the non-local block, defaults to the coarsest level with more than
        one node
    ushape: bool, default=True
        Use the encoder/decoder; otherwise a flat stack of GCN units at level 0
    groups: int, optional
        GroupNorm group count, defaults to min(8, width)
    seed: int, default=0
        Initialization seed
    """

    in_features: int = 19
    width: int = 32
    units_per_level: int = 2
    attention_features: int = 16
    adaptive_adjacency: bool = True
    share_adjacency: bool = False
    nonlocal_block: bool = True
    nonlocal_level: Optional[int] = None
    ushape: bool = True
    groups: Optional[int] = None
    seed: int = 0


class OutputHead(Layer):
    """
    GroupNorm, ReLU and a fixed graph convolution to coordinates with a per-vertex
    bias and no activation

    Attributes
    ----------
    norm: GroupNorm
        The normalization
    conv: GraphConvLayer
        Convolution to three channels
    """

    def __init__(self, hierarchy: MeshHierarchy, width: int, rng, groups=None):
        self.norm = GroupNorm(width, groups)
        self.conv = GraphConvLayer(
            hierarchy.adjacencies[0], width, 3, rng, activation=None, vertex_bias=True
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(autodiff.relu(self.norm(x)))


class DCGNet(Layer):
    """
    Graph network mapping per-vertex input features to vertex coordinates

    Parameters
    ----------
    hierarchy: MeshHierarchy
        The mesh levels the network runs on
    config: NetworkConfig, optional
        Architecture, defaults to :class:`NetworkConfig`

    Attributes
    ----------
    stem: FullyConnected
        Input channels to the hidden width
    encoder_units: list[list[GCNUnit]]
        GCN units of every encoder level
    down_fcs: list[FullyConnected]
        Fully connected layer applied before moving from level l to l + 1
    decoder_units: list[list[GCNUnit]]
        GCN units of decoder step l + 1
    decoder_fcs: list[FullyConnected]
        Transform of the upsampled decoder state
    fusion_attention: list[GraphAttention]
        Attention of encoder level l + 1
    fusion_fcs: list[FullyConnected]
        Transform of the concatenated fused features of decoder step l + 1
    combine_fcs: list[FullyConnected]
        Transform of the three concatenated branches of decoder step l + 1
    head: OutputHead
        Coordinate output at level 0
    nonlocal_block: NonLocalBlock or None
        Whole-body attention

    Examples
    --------
    >>> import numpy
    >>> import dcgnet
    >>> hierarchy = dcgnet.build_hierarchy(dcgnet.icosphere(1), levels=2, factor=4)
    >>> net = dcgnet.DCGNet(hierarchy, dcgnet.NetworkConfig(in_features=3, width=8))
    >>> x = dcgnet.Tensor(hierarchy.levels[0].vertices)
    >>> net.forward(x).shape
    (42, 3)
    """

    def __init__(self, hierarchy: MeshHierarchy, config: Optional[NetworkConfig] = None):
        config = NetworkConfig() if config is None else config
        self._hierarchy = hierarchy
        self._config = config
        self._shared: dict[int, AdaptiveAdjacency] = {}
        rng = numpy.random.default_rng(config.seed)
        width = config.width
        levels = hierarchy.number_of_levels if config.ushape else 0
        self._levels = levels

        self.stem = FullyConnected(config.in_features, width, rng)
        unit_count = config.units_per_level if config.ushape else 2 * config.units_per_level
        self.encoder_units = [
            [self._unit(level, rng) for _ in range(unit_count)]
            for level in range(levels + 1)
        ]
        self.down_fcs = [FullyConnected(width, width, rng) for _ in range(levels)]
        self.fusion_attention = [
            GraphAttention(width, config.attention_features, rng) for _ in range(levels)
        ]
        self.decoder_fcs = [FullyConnected(width, width, rng) for _ in range(levels)]
        self.fusion_fcs = [
            FullyConnected(step * config.attention_features, width, rng)
            for step in range(1, levels + 1)
        ]
        self.combine_fcs = [FullyConnected(3 * width, width, rng) for _ in range(levels)]
        self.decoder_units = [
            [self._unit(levels - step, rng) for _ in range(config.units_per_level)]
            for step in range(1, levels + 1)
        ]
        self.head = OutputHead(hierarchy, width, rng, config.groups)

        self.nonlocal_level = self._pick_nonlocal_level()
        self.nonlocal_block = (
            NonLocalBlock(width, rng) if config.nonlocal_block else None
        )
        logger.debug(
            "built network with %d levels and %d trainable values",
            levels,
            self.parameter_count(),
        )

    def _unit(self, level: int, rng: numpy.random.Generator) -> GCNUnit:
        adjacency = self._hierarchy.adjacencies[level]
        if self._config.share_adjacency:
            if level not in self._shared:
                self._shared[level] = AdaptiveAdjacency(
                    adjacency, trainable=self._config.adaptive_adjacency
                )
            adjacency = self._shared[level]
        return GCNUnit(
            adjacency,
            self._config.width,
            self._config.width,
            rng,
            adaptive=True,
            trainable_adjacency=self._config.adaptive_adjacency,
            groups=self._config.groups,
        )

    def _pick_nonlocal_level(self) -> int:
        if self._config.nonlocal_level is not None:
            if not 0 <= self._config.nonlocal_level <= self._levels:
                raise ValueError(
                    "nonlocal_level must lie in [0, "
                    + str(self._levels)
                    + "], got "
                    + str(self._config.nonlocal_level)
                )
            return self._config.nonlocal_level
        counts = self._hierarchy.node_counts[: self._levels + 1]
        return max(level for level, n in enumerate(counts) if n > 1 or level == 0)

    @property
    def hierarchy(self) -> MeshHierarchy:
        """MeshHierarchy: The mesh levels"""
        return self._hierarchy

    @property
    def config(self) -> NetworkConfig:
        """NetworkConfig: The architecture"""
        return self._config

    @property
    def levels(self) -> int:
        """int: Number of coarsening steps used, 0 for the flat variant"""
        return self._levels

    def _check_rows(self, tensor: Tensor, level: int, where: str) -> None:
        expected = self._hierarchy.node_counts[level]
        if tensor.shape[0] != expected:
            raise ShapeError(where, tensor.shape, (expected, tensor.shape[1]))

    def encode(self, x: Tensor) -> list[Tensor]:
        """See :func:`encode`"""
        return encode(self, x)

    def fuse(self, encoder_features: list[Tensor], step: int) -> Tensor:
        """See :func:`fuse`"""
        return fuse(self, encoder_features, step)

    def decode(self, encoder_features: list[Tensor]) -> Tensor:
        """See :func:`decode`"""
        return decode(self, encoder_features)

    def forward(self, x: Tensor) -> Tensor:
        return forward(self, x)

    def learned_adjacencies(self) -> dict[str, NDArray[float]]:
        """
        Current adjacency residuals by parameter name

        Returns
        -------
        dict[str, NDArray[float]]
            Copies of every trainable residual
        """
        return {
            name: p.numpy()
            for name, p in self.named_parameters().items()
            if name.endswith("adjacency.learned")
        }

    def state(self) -> dict[str, NDArray[float]]:
        """
        Copies of all trainable parameter values

        Returns
        -------
        dict[str, NDArray[float]]
            Values by parameter name
        """
        return {name: p.numpy() for name, p in self.named_parameters().items()}

    def load_state(self, values: dict[str, NDArray[float]]) -> None:
        """
        Overwrite every trainable parameter

        Parameters
        ----------
        values: dict[str, NDArray[float]]
            Exactly one array per parameter name with a matching shape

        Returns
        -------
        None
        """
        parameters = self.named_parameters()
        problems = []
        for name in sorted(set(parameters) - set(values)):
            problems.append("missing parameter " + name)
        for name in sorted(set(values) - set(parameters)):
            problems.append("unexpected parameter " + name)
        for name in sorted(set(parameters) & set(values)):
            if numpy.shape(values[name]) != parameters[name].shape:
                problems.append(
                    "parameter "
                    + name
                    + " has shape "
                    + str(numpy.shape(values[name]))
                    + ", expected "
                    + str(parameters[name].shape)
                )
        if problems:
            raise CheckpointError("; ".join(problems))
        for name, parameter in parameters.items():
            parameter.data[...] = values[name]


def encode(net: DCGNet, x: Tensor) -> list[Tensor]:
    """
    Encoder features of every level

    Parameters
    ----------
    net: DCGNet
        The network
    x: Tensor
        (N_0, in_features) input

    Returns
    -------
    list[Tensor]
        L + 1 tensors, entry l has the node count of level l and `width` channels;
        the entry at the non-local level already includes the non-local block
    """
    if x.shape != (net.hierarchy.node_counts[0], net.config.in_features):
        raise ShapeError(
            "encode", x.shape, (net.hierarchy.node_counts[0], net.config.in_features)
        )
    features: list[Tensor] = []
    y = net.stem(x)
    for level in range(net.levels + 1):
        if level > 0:
            sampler = net.hierarchy.samplers[level - 1]
            y = autodiff.sparse_matmul(sampler.down, net.down_fcs[level - 1](y))
        for unit in net.encoder_units[level]:
            y = unit(y)
        if net.nonlocal_block is not None and level == net.nonlocal_level:
            y = net.nonlocal_block(y)
        net._check_rows(y, level, "encode")
        features.append(y)
    return features


def fuse(net: DCGNet, encoder_features: list[Tensor], step: int) -> Tensor:
    """
    Multi-level feature fusion of one decoder step

    Parameters
    ----------
    net: DCGNet
        The network
    encoder_features: list[Tensor]
        Output of :func:`encode`
    step: int
        Decoder step l in 1..L; features of encoder levels 1..l are fused

    Returns
    -------
    Tensor
        (N_t, width) fused features at level t = L - l
    """
    if not 1 <= step <= net.levels:
        raise ValueError(
            "fusion step must lie in [1, " + str(net.levels) + "], got " + str(step)
        )
    target = net.levels - step
    branches = []
    for level in range(1, step + 1):
        attended = autodiff.relu(
            net.fusion_attention[level - 1](
                encoder_features[level], net.hierarchy.adjacencies[level]
            )
        )
        branches.append(
            autodiff.sparse_matmul(net.hierarchy.resample(level, target), attended)
        )
    fused = net.fusion_fcs[step - 1](autodiff.concat_cols(branches))
    net._check_rows(fused, target, "fuse")
    return fused


def decode(net: DCGNet, encoder_features: list[Tensor]) -> Tensor:
    """
    Decoder and output head

    Parameters
    ----------
    net: DCGNet
        The network
    encoder_features: list[Tensor]
        Output of :func:`encode`

    Returns
    -------
    Tensor
        (N_0, 3) vertex coordinates
    """
    if len(encoder_features) != net.levels + 1:
        raise ValueError(
            "expected "
            + str(net.levels + 1)
            + " encoder levels, got "
            + str(len(encoder_features))
        )
    state = encoder_features[-1]
    for step in range(1, net.levels + 1):
        target = net.levels - step
        upsampled = autodiff.sparse_matmul(net.hierarchy.samplers[target].up, state)
        state = net.combine_fcs[step - 1](
            autodiff.concat_cols(
                [
                    net.decoder_fcs[step - 1](upsampled),
                    fuse(net, encoder_features, step),
                    encoder_features[target],
                ]
            )
        )
        for unit in net.decoder_units[step - 1]:
            state = unit(state)
        net._check_rows(state, target, "decode")
    return net.head(state)


def forward(net: DCGNet, x: Tensor) -> Tensor:
    """
    Input features to vertex coordinates

    Parameters
    ----------
    net: DCGNet
        The network
    x: Tensor
        (N_0, in_features) input

    Returns
    -------
    Tensor
        (N_0, 3) coordinates
    """
    return decode(net, encode(net, x))
