"""Central finite-difference checks of reverse-mode gradients.

An entry passes when the analytic and numeric derivatives differ by at most
`atol` in absolute terms or by less than `rtol` relative to the analytic value.
"""

import dataclasses
import logging
from typing import Callable, Optional

import numpy
import pandas
import scipy.sparse

from dcgnet import autodiff, layers, losses
from dcgnet.autodiff import Tensor
from dcgnet.coarsen import MeshHierarchy, build_hierarchy
from dcgnet.mesh import build_adjacency, icosphere
from dcgnet.network import DCGNet, NetworkConfig

logger = logging.getLogger(__name__)

STEP = 1e-5
RTOL = 1e-4
ATOL = 1e-6


@dataclasses.dataclass
class GradcheckResult:
    """Outcome of one finite-difference check

    Attributes
    ----------
    checked: int
        Number of parameter entries compared
    max_abs_error: float
        Largest absolute difference
    max_rel_error: float
        Largest relative difference among entries outside the absolute tolerance
    failures: list[str]
        "name[index]" of every failing entry
    """

    checked: int
    max_abs_error: float
    max_rel_error: float
    failures: list[str]

    @property
    def passed(self) -> bool:
        """bool: True if no entry failed"""
        return not self.failures


def check_gradients(
    loss_fn: Callable[[], Tensor],
    parameters: dict[str, Tensor],
    rng: Optional[numpy.random.Generator] = None,
    max_entries: Optional[int] = None,
    h: float = STEP,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> GradcheckResult:
    """
    Compare backpropagated gradients against central differences

    Parameters
    ----------
    loss_fn: Callable[[], Tensor]
        Rebuilds the scalar loss from the current parameter values
    parameters: dict[str, Tensor]
        Parameters to check
    rng: numpy.random.Generator, optional
        Picks the checked entries when `max_entries` is given
    max_entries: int, optional
        Entries checked per parameter, all when omitted
    h: float, default=1e-5
        Finite-difference step
    rtol: float, default=1e-4
        Relative tolerance
    atol: float, default=1e-6
        Absolute tolerance

    Returns
    -------
    GradcheckResult
        Error summary
    """
    for parameter in parameters.values():
        parameter.zero_grad()
    autodiff.backward(loss_fn())
    analytic = {name: p.grad.copy() for name, p in parameters.items()}

    rng = numpy.random.default_rng(0) if rng is None else rng
    checked = 0
    max_abs = 0.0
    max_rel = 0.0
    failures = []
    for name, parameter in parameters.items():
        flat = parameter.data.reshape(-1)
        entries = numpy.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = numpy.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for index in entries:
            original = flat[index]
            flat[index] = original + h
            upper = float(loss_fn().data)
            flat[index] = original - h
            lower = float(loss_fn().data)
            flat[index] = original
            numeric = (upper - lower) / (2.0 * h)
            exact = float(analytic[name].reshape(-1)[index])
            error = abs(exact - numeric)
            checked += 1
            max_abs = max(max_abs, error)
            if error <= atol:
                continue
            relative = error / (abs(exact) + 1e-8)
            max_rel = max(max_rel, relative)
            if relative >= rtol:
                failures.append(name + "[" + str(int(index)) + "]")
    return GradcheckResult(checked, max_abs, max_rel, failures)


def _weighted_sum(output: Tensor, weights: numpy.ndarray) -> Tensor:
    return autodiff.sum(autodiff.mul(output, autodiff.constant(weights)))


def _layer_cases(seed: int) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    rng = numpy.random.default_rng(seed)
    adjacency = build_adjacency(icosphere(0), add_self_loops=True, normalize=True)
    n = adjacency.size
    x = autodiff.constant(rng.normal(size=(n, 8)))
    cases = {}

    conv = layers.GraphConvLayer(adjacency, 8, 6, rng, vertex_bias=True)
    conv.bias.data[:] = rng.normal(size=conv.bias.shape)
    w = rng.normal(size=(n, 6))
    cases["graph_conv"] = (lambda: _weighted_sum(conv(x), w), conv.named_parameters())

    adaptive = layers.AdaptiveGraphConvLayer(adjacency, 8, 6, rng)
    adaptive.adjacency.learned.data += 0.1 * rng.normal(size=(n, n))
    cases["adaptive_graph_conv"] = (
        lambda: _weighted_sum(adaptive(x), w),
        adaptive.named_parameters(),
    )

    unit = layers.GCNUnit(adjacency, 8, 6, rng, groups=4)
    unit.norm.bias.data[:] = rng.normal(size=unit.norm.bias.shape)
    cases["gcn_unit"] = (lambda: _weighted_sum(unit(x), w), unit.named_parameters())

    attention = layers.GraphAttention(8, 6, rng)
    cases["graph_attention"] = (
        lambda: _weighted_sum(attention(x, adjacency), w),
        attention.named_parameters(),
    )

    block = layers.NonLocalBlock(8, rng)
    block.out.data[:] = rng.normal(size=block.out.shape)
    w8 = rng.normal(size=(n, 8))
    cases["non_local"] = (lambda: _weighted_sum(block(x), w8), block.named_parameters())

    fc = layers.FullyConnected(8, 6, rng)
    fc.bias.data[:] = rng.normal(size=fc.bias.shape)
    cases["fully_connected"] = (lambda: _weighted_sum(fc(x), w), fc.named_parameters())

    mesh = Tensor(rng.normal(size=(n, 3)), requires_grad=True)
    selection = scipy.sparse.csr_matrix(
        (numpy.full(4, 0.5), ([0, 0, 1, 1], [0, 1, 2, 3])), shape=(2, n)
    )
    regressor = losses.JointRegressor(selection, ["a", "b"])
    camera = losses.Camera(1.3, (0.2, -0.1))
    gt_mesh = autodiff.constant(rng.normal(size=(n, 3)))
    gt3d = autodiff.constant(rng.normal(size=(2, 3)))
    gt2d = autodiff.constant(rng.normal(size=(2, 2)))
    cases["total_loss"] = (
        lambda: losses.total_loss(mesh, gt_mesh, gt3d, gt2d, regressor, camera),
        {"mesh": mesh},
    )
    return cases


def network_case(
    seed: int, hierarchy: Optional[MeshHierarchy] = None
) -> tuple[Callable[[], Tensor], dict[str, Tensor]]:
    """
    End-to-end vertex loss of a small network

    Parameters
    ----------
    seed: int
        Seed of the weights, inputs and targets
    hierarchy: MeshHierarchy, optional
        Defaults to a 42-node icosphere coarsened twice

    Returns
    -------
    tuple[Callable[[], Tensor], dict[str, Tensor]]
        The loss closure and the network parameters
    """
    if hierarchy is None:
        hierarchy = build_hierarchy(icosphere(1), levels=2, factor=4)
    net = DCGNet(
        hierarchy,
        NetworkConfig(in_features=5, width=8, attention_features=4, seed=seed),
    )
    rng = numpy.random.default_rng(seed)
    # a zero output projection leaves the non-local embeddings without gradient
    net.nonlocal_block.out.data[:] = 0.1 * rng.normal(size=net.nonlocal_block.out.shape)
    n = hierarchy.node_counts[0]
    x = autodiff.constant(rng.normal(size=(n, 5)))
    target = autodiff.constant(rng.normal(size=(n, 3)))
    return (
        lambda: losses.vertex_loss(net.forward(x), target),
        net.named_parameters(),
    )


def run_suite(
    seeds: int = 10, entries_per_tensor: int = 6, network_entries: int = 3
) -> pandas.DataFrame:
    """
    Check every layer type, the losses and a whole network over several seeds

    Parameters
    ----------
    seeds: int, default=10
        Number of seeds per case
    entries_per_tensor: int, default=6
        Checked entries per layer parameter
    network_entries: int, default=3
        Checked entries per network parameter

    Returns
    -------
    pandas.DataFrame
        One row per (case, seed) with columns "case", "seed", "checked",
        "max_abs_error", "max_rel_error" and "passed"
    """
    hierarchy = build_hierarchy(icosphere(1), levels=2, factor=4)
    rows = []
    for seed in range(seeds):
        cases = _layer_cases(seed)
        cases["network"] = network_case(seed, hierarchy)
        for name, (loss_fn, parameters) in cases.items():
            result = check_gradients(
                loss_fn,
                parameters,
                numpy.random.default_rng(seed),
                network_entries if name == "network" else entries_per_tensor,
            )
            if not result.passed:
                logger.warning(
                    "gradient check %s seed %d failed at %s",
                    name,
                    seed,
                    ", ".join(result.failures),
                )
            rows.append(
                {
                    "case": name,
                    "seed": seed,
                    "checked": result.checked,
                    "max_abs_error": result.max_abs_error,
                    "max_rel_error": result.max_rel_error,
                    "passed": result.passed,
                }
            )
    return pandas.DataFrame(rows)
