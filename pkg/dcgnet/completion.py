"""Shape completion: hide whole node rows of the input and recover the full mesh."""

import collections
import dataclasses
import logging
from typing import Literal, Optional, Sequence

import numpy
from numpy.typing import NDArray

from dcgnet import autodiff
from dcgnet.autodiff import Tensor
from dcgnet.losses import Reduction, vertex_loss

logger = logging.getLogger(__name__)

MaskMode = Literal["uniform_random", "contiguous_patch"]
"""Type: How masked rows are chosen"""


@dataclasses.dataclass(frozen=True)
class MaskSpec:
    """How many node rows to hide and how to pick them

    Attributes
    ----------
    c: int
        Number of masked rows
    seed: int
        Seed of the row choice
    mode: MaskMode, default="uniform_random"
        "uniform_random" shuffles all rows, "contiguous_patch" grows a patch from a
        random node in breadth-first order
    """

    c: int
    seed: int
    mode: MaskMode = "uniform_random"


def masked_rows(
    masking: MaskSpec,
    n: int,
    neighbors: Optional[Sequence[Sequence[int]]] = None,
    draw: Sequence[int] = (),
) -> NDArray[int]:
    """
    Indices of the rows a mask hides

    Parameters
    ----------
    masking: MaskSpec
        The mask description
    n: int
        Number of rows
    neighbors: Sequence[Sequence[int]], optional
        Graph neighbors of every node, required by "contiguous_patch"
    draw: Sequence[int], default=()
        Extra non-negative integers mixed into the seed, so every training step and
        batch position gets its own draw

    Returns
    -------
    NDArray[int]
        `masking.c` distinct row indices, in the order they were chosen
    """
    if not 0 <= masking.c <= n:
        raise ValueError(
            "mask count must lie in [0, " + str(n) + "], got " + str(masking.c)
        )
    rng = numpy.random.default_rng([masking.seed, *draw])
    if masking.mode == "uniform_random":
        return rng.permutation(n)[: masking.c]
    if masking.mode != "contiguous_patch":
        raise ValueError("Unknown mask mode " + str(masking.mode))
    if neighbors is None:
        raise ValueError("contiguous_patch masks need the node neighbors")
    if len(neighbors) != n:
        raise ValueError(
            "neighbor lists cover " + str(len(neighbors)) + " nodes, expected " + str(n)
        )

    chosen: list[int] = []
    visited = numpy.zeros(n, dtype=bool)
    # several seeds are only needed when the graph has several components
    while len(chosen) < masking.c:
        start = int(rng.choice(numpy.flatnonzero(~visited)))
        visited[start] = True
        queue = collections.deque([start])
        while queue and len(chosen) < masking.c:
            node = queue.popleft()
            chosen.append(node)
            for neighbor in sorted(neighbors[node]):
                if not visited[neighbor]:
                    visited[neighbor] = True
                    queue.append(neighbor)
    return numpy.array(chosen, dtype=int)


def make_mask(
    masking: MaskSpec,
    n: int,
    k: int,
    neighbors: Optional[Sequence[Sequence[int]]] = None,
    draw: Sequence[int] = (),
) -> NDArray[float]:
    """
    Binary row mask

    Parameters
    ----------
    masking: MaskSpec
        The mask description
    n: int
        Number of rows
    k: int
        Number of columns
    neighbors: Sequence[Sequence[int]], optional
        Graph neighbors, required by "contiguous_patch"
    draw: Sequence[int], default=()
        Extra seed material, see :func:`masked_rows`

    Returns
    -------
    NDArray[float]
        (n, k) array with exactly `masking.c` all-zero rows and all other entries one

    Examples
    --------
    >>> from dcgnet.completion import MaskSpec, make_mask
    >>> mask = make_mask(MaskSpec(c=2, seed=7), 5, 3)
    >>> int(mask.sum()), int((mask.sum(axis=1) == 0).sum())
    (9, 2)
    """
    mask = numpy.ones([n, k])
    mask[masked_rows(masking, n, neighbors, draw)] = 0.0
    return mask


def apply_mask(x: Tensor, mask: NDArray[float]) -> Tensor:
    """
    Zero the masked rows of an input

    Parameters
    ----------
    x: Tensor
        (n, k) input
    mask: NDArray[float]
        (n, k) binary mask from :func:`make_mask`

    Returns
    -------
    Tensor
        The elementwise product
    """
    return autodiff.mul(x, autodiff.constant(mask))


def completion_step(
    net,
    x: Tensor,
    masking: MaskSpec,
    target: Optional[NDArray[float]] = None,
    draw: Sequence[int] = (),
    reduction: Reduction = "sum",
) -> Tensor:
    """
    Completion loss of one sample

    Parameters
    ----------
    net: DCGNet
        The network
    x: Tensor
        The full, unmasked (N_0, in_features) input
    masking: MaskSpec
        Rows to hide
    target: NDArray[float], optional
        (N_0, 3) coordinates to recover, defaults to the coordinate columns of `x`
    draw: Sequence[int], default=()
        Extra seed material for the mask
    reduction: "sum" or "mean", default="sum"
        Vertex loss reduction

    Returns
    -------
    Tensor
        Scalar vertex L1 between the prediction from the masked input and `target`
    """
    n, k = x.shape
    neighbors = (
        net.hierarchy.levels[0].neighbors() if masking.mode == "contiguous_patch" else None
    )
    mask = make_mask(masking, n, k, neighbors, draw)
    if target is None:
        target = x.data[:, :3]
    prediction = net.forward(apply_mask(x, mask))
    return vertex_loss(prediction, autodiff.constant(target), reduction)
