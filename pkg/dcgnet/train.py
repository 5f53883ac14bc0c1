"""Adam optimization, the pretrain-then-train schedule and checkpoints.

A batch is realized by accumulating the gradients of its samples, each scaled by
1 / batch size, before a single Adam step. Batch composition depends only on the
seed, the phase and the step, and mask draws only on the mask seed, the step and
the position in the batch, so a run resumed from a checkpoint continues exactly
like an uninterrupted one.
"""

import dataclasses
import logging
import math
import time
from typing import Optional, Sequence

import numpy
import pandas
from numpy.typing import NDArray

from dcgnet import autodiff
from dcgnet.autodiff import Tensor
from dcgnet.completion import MaskMode, MaskSpec, completion_step
from dcgnet.data import Dataset, Sample
from dcgnet.errors import CheckpointError, DatasetError, ShapeError
from dcgnet.losses import Camera, JointRegressor, Reduction, loss_terms, weighted_total
from dcgnet.metrics import EvalReport, evaluate
from dcgnet.network import DCGNet

logger = logging.getLogger(__name__)

CHECKPOINT_HEADER = "dcgnet-checkpoint v1"
_PRETRAIN_PHASE = 1
_MAIN_PHASE = 2


@dataclasses.dataclass
class TrainConfig:
    """Optimization hyperparameters

    Attributes
    ----------
    batch_size: int, default=16
        Samples per Adam step
    learning_rate: float, default=3e-4
        Adam step size
    adam_beta1: float, default=0.9
        First moment decay
    adam_beta2: float, default=0.999
        Second moment decay
    adam_eps: float, default=1e-8
        Denominator offset
    pretrain_steps: int, default=2000
        Adam steps of shape completion pretraining
    main_epochs: int, default=20
        Passes over the training split in the main phase
    mask_count: int, default=50
        Rows hidden per completion sample, about 0.116 of a 432-node template
    mask_mode: MaskMode, default="uniform_random"
        How hidden rows are chosen
    mask_seed: int, default=0
        Seed of the mask draws
    seed: int, default=0
        Seed of the batch order
    loss_weights: tuple[float, float, float], default=(1.0, 1.0, 1.0)
        Weights of the vertex, 3D joint and 2D joint losses
    coordinate_scale: float, default=1000.0
        Millimetre coordinates are divided by this value for training
    reduction: "sum" or "mean", default="sum"
        Combination of per-row L1 distances in every loss
    """

    batch_size: int = 16
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    pretrain_steps: int = 2000
    main_epochs: int = 20
    mask_count: int = 50
    mask_mode: MaskMode = "uniform_random"
    mask_seed: int = 0
    seed: int = 0
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    coordinate_scale: float = 1000.0
    reduction: Reduction = "sum"

    def violations(self) -> list[str]:
        """
        Every invalid value

        Returns
        -------
        list[str]
            One message per problem, empty when the configuration is valid
        """
        problems = []
        for name in ("batch_size", "learning_rate", "adam_eps", "coordinate_scale"):
            if not getattr(self, name) > 0:
                problems.append(name + " must be positive, got " + str(getattr(self, name)))
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                problems.append(name + " must lie in [0, 1), got " + str(getattr(self, name)))
        for name in ("pretrain_steps", "main_epochs", "mask_count", "mask_seed", "seed"):
            if getattr(self, name) < 0:
                problems.append(name + " must be non-negative, got " + str(getattr(self, name)))
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            problems.append("loss_weights must be three non-negative values")
        if self.mask_mode not in ("uniform_random", "contiguous_patch"):
            problems.append("mask_mode must be uniform_random or contiguous_patch")
        if self.reduction not in ("sum", "mean"):
            problems.append("reduction must be sum or mean")
        return problems


@dataclasses.dataclass
class AdamState:
    """Adam moments by parameter name

    Attributes
    ----------
    step: int
        Number of updates taken
    first: dict[str, NDArray[float]]
        First moment estimates
    second: dict[str, NDArray[float]]
        Second moment estimates
    """

    step: int = 0
    first: dict[str, NDArray[float]] = dataclasses.field(default_factory=dict)
    second: dict[str, NDArray[float]] = dataclasses.field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: Optional[dict[str, NDArray[float]]],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """
    One bias-corrected Adam update, in place

    Parameters
    ----------
    params: dict[str, Tensor]
        Parameters by name
    grads: dict[str, NDArray[float]], optional
        Gradients by name, the accumulated `grad` of every parameter when omitted
    state: AdamState
        Moments, updated in place
    config: TrainConfig
        Step size and decay rates

    Returns
    -------
    None
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    state.step += 1
    beta1, beta2 = config.adam_beta1, config.adam_beta2
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, parameter in params.items():
        grad = grads[name]
        if grad is None:
            grad = numpy.zeros_like(parameter.data)
        if grad.shape != parameter.shape:
            raise ShapeError("adam_step " + name, parameter.shape, grad.shape)
        first = state.first.get(name, numpy.zeros_like(parameter.data))
        second = state.second.get(name, numpy.zeros_like(parameter.data))
        first = beta1 * first + (1.0 - beta1) * grad
        second = beta2 * second + (1.0 - beta2) * grad * grad
        state.first[name] = first
        state.second[name] = second
        parameter.data -= (
            config.learning_rate
            * (first / correction1)
            / (numpy.sqrt(second / correction2) + config.adam_eps)
        )


@dataclasses.dataclass
class Checkpoint:
    """Parameters and optimizer state of a run

    Attributes
    ----------
    config: dict[str, str]
        Configuration snapshot
    parameters: dict[str, NDArray[float]]
        Trainable parameters by name
    adam: AdamState
        Optimizer moments
    step: int
        Completed optimizer steps of the phase
    epoch: int
        Completed epochs of the phase
    phase: str
        "init", "pretrain" or "main"
    format_version: int
        File format version
    """

    config: dict[str, str]
    parameters: dict[str, NDArray[float]]
    adam: AdamState
    step: int = 0
    epoch: int = 0
    phase: str = "init"
    format_version: int = 1

    @classmethod
    def capture(
        cls,
        net: DCGNet,
        adam: AdamState,
        config: dict[str, str],
        step: int = 0,
        epoch: int = 0,
        phase: str = "init",
    ) -> "Checkpoint":
        """Snapshot a network and its optimizer, copying every array"""
        return cls(
            config=dict(config),
            parameters=net.state(),
            adam=AdamState(
                adam.step,
                {k: v.copy() for k, v in adam.first.items()},
                {k: v.copy() for k, v in adam.second.items()},
            ),
            step=step,
            epoch=epoch,
            phase=phase,
        )

    def restore(self, net: DCGNet) -> AdamState:
        """
        Load the parameters into a network

        Parameters
        ----------
        net: DCGNet
            A network with the same parameter names and shapes

        Returns
        -------
        AdamState
            A copy of the optimizer state
        """
        net.load_state(self.parameters)
        return AdamState(
            self.adam.step,
            {k: v.copy() for k, v in self.adam.first.items()},
            {k: v.copy() for k, v in self.adam.second.items()},
        )


def save_checkpoint(checkpoint: Checkpoint, file_name: str) -> None:
    """
    Write a checkpoint as a text header followed by little-endian float64 blocks

    Parameters
    ----------
    checkpoint: Checkpoint
        The checkpoint
    file_name: str
        The path to write to

    Returns
    -------
    None
    """
    blocks = []
    lines = [CHECKPOINT_HEADER]
    for key, value in sorted(checkpoint.config.items()):
        lines.append("config " + key + " " + str(value))
    lines.append("phase " + checkpoint.phase)
    lines.append("step " + str(checkpoint.step))
    lines.append("epoch " + str(checkpoint.epoch))
    lines.append("adam_step " + str(checkpoint.adam.step))
    offset = 0
    groups = [
        ("param", checkpoint.parameters),
        ("adam_m", checkpoint.adam.first),
        ("adam_v", checkpoint.adam.second),
    ]
    for kind, arrays in groups:
        for name, array in arrays.items():
            data = numpy.ascontiguousarray(array, dtype="<f8").tobytes()
            shape = "x".join(str(d) for d in numpy.shape(array)) or "scalar"
            lines.append(
                "tensor " + kind + " " + name + " " + shape + " " + str(offset) + " " + str(len(data))
            )
            blocks.append(data)
            offset += len(data)
    lines.append("end")
    with open(file_name, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("utf-8"))
        for data in blocks:
            f.write(data)


def load_checkpoint(file_name: str) -> Checkpoint:
    """
    Read a checkpoint written by :func:`save_checkpoint`

    Parameters
    ----------
    file_name: str
        The path to read

    Returns
    -------
    Checkpoint
        The checkpoint, arrays reproduced bit-exactly
    """
    try:
        with open(file_name, "rb") as f:
            content = f.read()
    except OSError as error:
        raise CheckpointError(file_name + ": " + str(error))
    marker = b"\nend\n"
    split = content.find(marker)
    if split < 0:
        raise CheckpointError(file_name + ": missing header terminator")
    header = content[:split].decode("utf-8").split("\n")
    payload = content[split + len(marker):]
    if header[0] != CHECKPOINT_HEADER:
        raise CheckpointError(file_name + ": unsupported checkpoint format " + repr(header[0]))

    config: dict[str, str] = {}
    fields: dict[str, str] = {}
    arrays = {"param": {}, "adam_m": {}, "adam_v": {}}
    try:
        for line in header[1:]:
            tokens = line.split(" ", 2)
            if tokens[0] == "config":
                config[tokens[1]] = tokens[2] if len(tokens) > 2 else ""
            elif tokens[0] == "tensor":
                kind, name, shape, offset, size = line.split()[1:]
                offset, size = int(offset), int(size)
                if offset + size > len(payload):
                    raise CheckpointError(file_name + ": tensor " + name + " is truncated")
                dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
                values = numpy.frombuffer(payload[offset : offset + size], dtype="<f8")
                arrays[kind][name] = values.astype(numpy.float64).reshape(dims)
            else:
                fields[tokens[0]] = tokens[1]
        return Checkpoint(
            config=config,
            parameters=arrays["param"],
            adam=AdamState(int(fields["adam_step"]), arrays["adam_m"], arrays["adam_v"]),
            step=int(fields["step"]),
            epoch=int(fields["epoch"]),
            phase=fields["phase"],
        )
    except (KeyError, ValueError, IndexError) as error:
        raise CheckpointError(file_name + ": malformed header (" + str(error) + ")")


@dataclasses.dataclass
class PreparedSample:
    """A sample as tensors in training units"""

    id: str
    inputs: Tensor
    gt_mesh: Tensor
    gt_joints3d: Tensor
    gt_joints2d: Tensor
    camera: Camera


def prepare(sample: Sample, coordinate_scale: float) -> PreparedSample:
    """
    Divide every coordinate of a sample by the coordinate scale

    Parameters
    ----------
    sample: Sample
        A sample in millimetres
    coordinate_scale: float
        The divisor

    Returns
    -------
    PreparedSample
        Constant tensors; feature columns after the first three are left unchanged
    """
    inputs = sample.input_features.copy()
    inputs[:, :3] /= coordinate_scale
    return PreparedSample(
        id=sample.id,
        inputs=autodiff.constant(inputs),
        gt_mesh=autodiff.constant(sample.gt_mesh / coordinate_scale),
        gt_joints3d=autodiff.constant(sample.gt_joints3d / coordinate_scale),
        gt_joints2d=autodiff.constant(sample.gt_joints2d / coordinate_scale),
        camera=sample.camera.rescaled(coordinate_scale),
    )


def batch_indices(seed: int, phase: int, step: int, batch_size: int, n: int) -> list[int]:
    """
    Training samples of one step

    Samples are taken in order from a stream of per-epoch permutations, epoch e
    using the permutation drawn from (seed, phase, e).

    Parameters
    ----------
    seed: int
        Run seed
    phase: int
        Phase identifier
    step: int
        Zero-based step
    batch_size: int
        Samples per step
    n: int
        Training split size

    Returns
    -------
    list[int]
        `batch_size` sample indices
    """
    if n == 0:
        raise DatasetError("the training split is empty")
    indices = []
    orders: dict[int, NDArray[int]] = {}
    for position in range(step * batch_size, (step + 1) * batch_size):
        epoch = position // n
        if epoch not in orders:
            orders[epoch] = numpy.random.default_rng([seed, phase, epoch]).permutation(n)
        indices.append(int(orders[epoch][position % n]))
    return indices


def pretrain_step(
    net: DCGNet,
    batch: Sequence[PreparedSample],
    state: AdamState,
    config: TrainConfig,
    step: int,
) -> float:
    """
    One completion step over a batch

    Parameters
    ----------
    net: DCGNet
        The network, updated in place
    batch: Sequence[PreparedSample]
        The samples
    state: AdamState
        Optimizer state
    config: TrainConfig
        Hyperparameters
    step: int
        Zero-based step, seeds the masks

    Returns
    -------
    float
        Mean completion loss of the batch before the update
    """
    net.zero_grad()
    masking = MaskSpec(config.mask_count, config.mask_seed, config.mask_mode)
    total = 0.0
    for position, sample in enumerate(batch):
        loss = completion_step(
            net,
            sample.inputs,
            masking,
            draw=(step, position),
            reduction=config.reduction,
        )
        autodiff.backward(autodiff.scale(loss, 1.0 / len(batch)))
        total += float(loss.data)
    adam_step(net.named_parameters(), None, state, config)
    return total / len(batch)


def train_step(
    net: DCGNet,
    batch: Sequence[PreparedSample],
    regressor: JointRegressor,
    state: AdamState,
    config: TrainConfig,
) -> dict[str, float]:
    """
    One supervised step over a batch

    Parameters
    ----------
    net: DCGNet
        The network, updated in place
    batch: Sequence[PreparedSample]
        The samples
    regressor: JointRegressor
        Mesh to joint map
    state: AdamState
        Optimizer state
    config: TrainConfig
        Hyperparameters

    Returns
    -------
    dict[str, float]
        Batch means of "loss", "vertex", "joint3d" and "joint2d" before the update
    """
    net.zero_grad()
    sums = {"loss": 0.0, "vertex": 0.0, "joint3d": 0.0, "joint2d": 0.0}
    for sample in batch:
        prediction = net.forward(sample.inputs)
        terms = loss_terms(
            prediction,
            sample.gt_mesh,
            sample.gt_joints3d,
            sample.gt_joints2d,
            regressor,
            sample.camera,
            config.reduction,
        )
        loss = weighted_total(terms, config.loss_weights)
        autodiff.backward(autodiff.scale(loss, 1.0 / len(batch)))
        sums["loss"] += float(loss.data)
        for name, term in terms.items():
            sums[name] += float(term.data)
    adam_step(net.named_parameters(), None, state, config)
    return {name: value / len(batch) for name, value in sums.items()}


def predict(net: DCGNet, sample: Sample, coordinate_scale: float) -> NDArray[float]:
    """
    Predicted vertices of a sample in millimetres

    Parameters
    ----------
    net: DCGNet
        The network
    sample: Sample
        The sample
    coordinate_scale: float
        Training coordinate divisor

    Returns
    -------
    NDArray[float]
        (N, 3) vertices
    """
    return net.forward(prepare(sample, coordinate_scale).inputs).data * coordinate_scale


def evaluate_model(
    net: DCGNet,
    samples: Sequence[Sample],
    regressor: JointRegressor,
    coordinate_scale: float,
) -> EvalReport:
    """
    Metrics of a network on a set of samples, in millimetres

    Parameters
    ----------
    net: DCGNet
        The network
    samples: Sequence[Sample]
        Samples to evaluate
    regressor: JointRegressor
        Mesh to joint map
    coordinate_scale: float
        Training coordinate divisor

    Returns
    -------
    EvalReport
        The metrics
    """
    meshes = [predict(net, s, coordinate_scale) for s in samples]
    return evaluate(
        [s.id for s in samples],
        [regressor.regress_array(m) for m in meshes],
        [s.gt_joints3d for s in samples],
        meshes,
        [s.gt_mesh for s in samples],
    )


@dataclasses.dataclass
class TrainResult:
    """Outcome of a training phase

    Attributes
    ----------
    best: Checkpoint
        Checkpoint with the lowest validation MPJPE, the final one for pretraining
    last: Checkpoint
        Checkpoint after the final step
    history: pandas.DataFrame
        One row per optimizer step
    evaluations: pandas.DataFrame
        One row per validation pass, empty for pretraining
    """

    best: Checkpoint
    last: Checkpoint
    history: pandas.DataFrame
    evaluations: pandas.DataFrame


def pretrain(
    net: DCGNet,
    dataset: Dataset,
    config: TrainConfig,
    snapshot: Optional[dict[str, str]] = None,
) -> TrainResult:
    """
    Shape completion pretraining

    Parameters
    ----------
    net: DCGNet
        The network, trained in place
    dataset: Dataset
        Data; the train split is used
    config: TrainConfig
        Hyperparameters
    snapshot: dict[str, str], optional
        Configuration recorded in the checkpoints

    Returns
    -------
    TrainResult
        The final state and the loss trace
    """
    snapshot = {} if snapshot is None else snapshot
    samples = [prepare(s, config.coordinate_scale) for s in dataset.split("train")]
    state = AdamState()
    rows = []
    started = time.perf_counter()
    for step in range(config.pretrain_steps):
        batch = [
            samples[i]
            for i in batch_indices(
                config.seed, _PRETRAIN_PHASE, step, config.batch_size, len(samples)
            )
        ]
        loss = pretrain_step(net, batch, state, config, step)
        if not math.isfinite(loss):
            raise FloatingPointError("completion loss diverged at step " + str(step))
        rows.append(
            {"step": step, "loss": loss, "wall_time": time.perf_counter() - started}
        )
        logger.info("pretrain step %d completion loss %.6f", step, loss)
    final = Checkpoint.capture(
        net, state, snapshot, step=config.pretrain_steps, phase="pretrain"
    )
    return TrainResult(
        final,
        final,
        pandas.DataFrame(rows, columns=["step", "loss", "wall_time"]),
        pandas.DataFrame(),
    )


def train_main(
    net: DCGNet,
    dataset: Dataset,
    config: TrainConfig,
    init: Optional[Checkpoint] = None,
    snapshot: Optional[dict[str, str]] = None,
) -> TrainResult:
    """
    Supervised training with validation after every epoch

    Parameters
    ----------
    net: DCGNet
        The network, trained in place
    dataset: Dataset
        Data; train and val splits are used
    config: TrainConfig
        Hyperparameters
    init: Checkpoint, optional
        Starting point; a pretraining checkpoint contributes its parameters, a main
        phase checkpoint also its optimizer state and epoch so training resumes
    snapshot: dict[str, str], optional
        Configuration recorded in the checkpoints

    Returns
    -------
    TrainResult
        Best and final checkpoints with the loss and validation traces
    """
    snapshot = {} if snapshot is None else snapshot
    state = AdamState()
    first_epoch = 1
    if init is not None:
        resumed = init.restore(net)
        if init.phase == "main":
            state = resumed
            first_epoch = init.epoch + 1
        logger.info("initialized from a %s checkpoint", init.phase)

    samples = [prepare(s, config.coordinate_scale) for s in dataset.split("train")]
    validation = dataset.split("val")
    if not validation:
        raise DatasetError("the validation split is empty")
    steps_per_epoch = math.ceil(len(samples) / config.batch_size)

    evaluations = []

    def validate(epoch: int) -> float:
        report = evaluate_model(net, validation, dataset.regressor, config.coordinate_scale)
        evaluations.append({"epoch": epoch, **report.summary()})
        logger.info(
            "epoch %d validation mpjpe %.3f reconst_error %.3f",
            epoch,
            report.mpjpe,
            report.reconst_error,
        )
        return report.mpjpe

    best_error = validate(first_epoch - 1)
    best = Checkpoint.capture(
        net, state, snapshot, step=state.step, epoch=first_epoch - 1, phase="main"
    )
    rows = []
    started = time.perf_counter()
    for epoch in range(first_epoch, config.main_epochs + 1):
        order = numpy.random.default_rng([config.seed, _MAIN_PHASE, epoch]).permutation(
            len(samples)
        )
        for batch_number in range(steps_per_epoch):
            chosen = order[batch_number * config.batch_size : (batch_number + 1) * config.batch_size]
            losses = train_step(
                net, [samples[i] for i in chosen], dataset.regressor, state, config
            )
            if not math.isfinite(losses["loss"]):
                raise FloatingPointError("loss diverged in epoch " + str(epoch))
            rows.append(
                {
                    "epoch": epoch,
                    "step": state.step,
                    **losses,
                    "wall_time": time.perf_counter() - started,
                }
            )
            logger.info("epoch %d step %d loss %.6f", epoch, state.step, losses["loss"])
        error = validate(epoch)
        if error < best_error:
            best_error = error
            best = Checkpoint.capture(
                net, state, snapshot, step=state.step, epoch=epoch, phase="main"
            )
    last = Checkpoint.capture(
        net,
        state,
        snapshot,
        step=state.step,
        epoch=max(config.main_epochs, first_epoch - 1),
        phase="main",
    )
    logger.info("best validation mpjpe %.3f at epoch %d", best_error, best.epoch)
    return TrainResult(
        best,
        last,
        pandas.DataFrame(
            rows,
            columns=["epoch", "step", "loss", "vertex", "joint3d", "joint2d", "wall_time"],
        ),
        pandas.DataFrame(evaluations),
    )
