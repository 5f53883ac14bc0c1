"""Run configuration: flat `key = value` files, overrides and validation.

Values are layered as defaults, then the config file, then `--set key=value`
overrides, then the global `--seed` and `--out` flags. Every problem found on the
way is collected and reported in a single :class:`~dcgnet.errors.ConfigError`.

Examples
--------
>>> from dcgnet.config import build_run_config
>>> config = build_run_config({"width": "16", "ushape": "no"}, seed=3)
>>> config.width, config.ushape, config.seed
(16, False, 3)
"""

import dataclasses
import os
import typing
from typing import Optional

from dcgnet.data import SPLITS
from dcgnet.errors import ConfigError
from dcgnet.network import NetworkConfig
from dcgnet.train import TrainConfig

_TRUE = ("true", "yes", "1")
_FALSE = ("false", "no", "0")

TABLE_MASK_COUNTS = (0, 50, 100, 200, 400)
"""tuple[int, ...]: Masked node counts of the masking ablation on a 1723-node mesh"""

TABLE_NODE_COUNT = 1723


@dataclasses.dataclass
class RunConfig:
    """Everything a command-line run needs

    Paths left empty resolve below `out`.

    Attributes
    ----------
    out: str, default="runs/default"
        Output directory
    template: str, default=""
        Template OBJ; empty generates the synthetic body template
    template_vertices: int, default=432
        Size of the generated template
    hierarchy: str, default=""
        Hierarchy manifest, defaults to `<out>/hierarchy/hierarchy.txt`
    dataset: str, default=""
        Dataset directory, defaults to `<out>/dataset`
    checkpoint: str, default=""
        Checkpoint evaluated or used for inference, defaults to
        `<out>/train/best.ckpt`
    init_checkpoint: str, default=""
        Checkpoint the main phase starts from, empty starts from scratch
    sample: str, default=""
        Sample file for inference, defaults to the first test sample
    eval_split: str, default="test"
        Split evaluated by the eval command
    levels: int, default=5
        Coarsening steps of the hierarchy
    factor: int, default=4
        Node reduction factor per level
    width: int, default=32
        Hidden channels
    units_per_level: int, default=2
        GCN units per encoder and decoder level
    attention_features: int, default=16
        Channels of the fusion attention
    adaptive_adjacency: bool, default=True
        Learn adjacency residuals
    share_adjacency: bool, default=False
        One adaptive adjacency per level instead of one per unit
    nonlocal_block: bool, default=True
        Use the non-local block
    nonlocal_level: int, default=-1
        Level of the non-local block, -1 for the coarsest level with several nodes
    ushape: bool, default=True
        Use the encoder/decoder rather than a flat stack
    groups: int, default=0
        GroupNorm groups, 0 for min(8, width)
    count: int, default=200
        Generated samples
    deform_scale: float, default=0.05
        Deformation amplitude relative to the template diagonal
    noise_scale: float, default=0.05
        Input noise relative to the template diagonal
    k_feat: int, default=16
        Projection features per vertex
    data_seed: int, default=0
        Dataset generator seed
    occlusion_fraction: float, default=0.116
        Fraction of rows hidden in the occluded test split
    gradcheck_seeds: int, default=10
        Seeds of the gradient check suite
    ablate_seeds: tuple[int, ...], default=(0, 1, 2)
        Seeds of the ablation
    ablate_epochs: int, default=5
        Main epochs of every ablation run
    ablate_pretrain_steps: int, default=300
        Pretraining steps of the pretrained ablation variant
    """

    out: str = "runs/default"
    template: str = ""
    template_vertices: int = 432
    hierarchy: str = ""
    dataset: str = ""
    checkpoint: str = ""
    init_checkpoint: str = ""
    sample: str = ""
    eval_split: str = "test"
    levels: int = 5
    factor: int = 4
    width: int = 32
    units_per_level: int = 2
    attention_features: int = 16
    adaptive_adjacency: bool = True
    share_adjacency: bool = False
    nonlocal_block: bool = True
    nonlocal_level: int = -1
    ushape: bool = True
    groups: int = 0
    count: int = 200
    deform_scale: float = 0.05
    noise_scale: float = 0.05
    k_feat: int = 16
    data_seed: int = 0
    occlusion_fraction: float = 0.116
    batch_size: int = 16
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    pretrain_steps: int = 2000
    main_epochs: int = 20
    mask_count: int = 50
    mask_mode: str = "uniform_random"
    mask_seed: int = 0
    seed: int = 0
    loss_weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    coordinate_scale: float = 1000.0
    reduction: str = "sum"
    gradcheck_seeds: int = 10
    ablate_seeds: tuple[int, ...] = (0, 1, 2)
    ablate_epochs: int = 5
    ablate_pretrain_steps: int = 300

    @property
    def hierarchy_path(self) -> str:
        """str: Resolved hierarchy manifest"""
        return self.hierarchy or os.path.join(self.out, "hierarchy", "hierarchy.txt")

    @property
    def dataset_path(self) -> str:
        """str: Resolved dataset directory"""
        return self.dataset or os.path.join(self.out, "dataset")

    @property
    def checkpoint_path(self) -> str:
        """str: Resolved checkpoint for evaluation and inference"""
        return self.checkpoint or os.path.join(self.out, "train", "best.ckpt")

    def train_config(self) -> TrainConfig:
        """
        The optimization part of the configuration

        Returns
        -------
        TrainConfig
            Hyperparameters for :mod:`dcgnet.train`
        """
        names = [f.name for f in dataclasses.fields(TrainConfig)]
        values = {name: getattr(self, name) for name in names}
        values["loss_weights"] = tuple(values["loss_weights"])
        return TrainConfig(**values)

    def network_config(self) -> NetworkConfig:
        """
        The architecture part of the configuration

        Returns
        -------
        NetworkConfig
            Architecture for :class:`dcgnet.network.DCGNet`
        """
        return NetworkConfig(
            in_features=3 + self.k_feat,
            width=self.width,
            units_per_level=self.units_per_level,
            attention_features=self.attention_features,
            adaptive_adjacency=self.adaptive_adjacency,
            share_adjacency=self.share_adjacency,
            nonlocal_block=self.nonlocal_block,
            nonlocal_level=None if self.nonlocal_level < 0 else self.nonlocal_level,
            ushape=self.ushape,
            groups=self.groups or None,
            seed=self.seed,
        )

    def ablation_mask_counts(self, node_count: int) -> list[int]:
        """
        Masked node counts matching the masking ablation ratios

        Parameters
        ----------
        node_count: int
            Template vertices

        Returns
        -------
        list[int]
            0, 50, 100, 200 and 400 scaled by node_count / 1723
        """
        return [int(round(c * node_count / TABLE_NODE_COUNT)) for c in TABLE_MASK_COUNTS]

    def snapshot(self) -> dict[str, str]:
        """
        Every value formatted as in a config file

        Returns
        -------
        dict[str, str]
            Formatted values by key
        """
        return {
            f.name: format_value(getattr(self, f.name))
            for f in dataclasses.fields(self)
        }

    def violations(self) -> list[str]:
        """
        Every invalid value

        Returns
        -------
        list[str]
            One message per problem
        """
        problems = self.train_config().violations()
        for name in ("levels", "width", "units_per_level", "attention_features", "template_vertices"):
            if getattr(self, name) < 1:
                problems.append(name + " must be at least 1, got " + str(getattr(self, name)))
        if self.factor < 2:
            problems.append("factor must be at least 2, got " + str(self.factor))
        for name in ("k_feat", "data_seed", "groups"):
            if getattr(self, name) < 0:
                problems.append(name + " must be non-negative, got " + str(getattr(self, name)))
        if self.count < 3:
            problems.append("count must be at least 3, got " + str(self.count))
        for name in ("deform_scale", "noise_scale"):
            if getattr(self, name) < 0:
                problems.append(name + " must be non-negative, got " + str(getattr(self, name)))
        if not 0.0 < self.occlusion_fraction < 1.0:
            problems.append(
                "occlusion_fraction must lie strictly between 0 and 1, got "
                + str(self.occlusion_fraction)
            )
        groups = self.groups or min(8, self.width)
        if self.width >= 1 and self.width % groups:
            problems.append(
                "GroupNorm groups " + str(groups) + " do not divide width " + str(self.width)
            )
        if not -1 <= self.nonlocal_level <= self.levels:
            problems.append(
                "nonlocal_level must lie in [-1, " + str(self.levels) + "], got " + str(self.nonlocal_level)
            )
        if not self.ushape and self.nonlocal_level > 0:
            problems.append("a flat network only has level 0 for the non-local block")
        if self.eval_split not in SPLITS:
            problems.append("eval_split must be one of " + ", ".join(SPLITS))
        if self.mask_count > self.template_vertices and not self.template:
            problems.append(
                "mask_count "
                + str(self.mask_count)
                + " exceeds the "
                + str(self.template_vertices)
                + " template vertices"
            )
        if self.gradcheck_seeds < 1:
            problems.append("gradcheck_seeds must be at least 1")
        if not self.ablate_seeds or any(s < 0 for s in self.ablate_seeds):
            problems.append("ablate_seeds must be a non-empty list of non-negative seeds")
        for name in ("ablate_epochs", "ablate_pretrain_steps"):
            if getattr(self, name) < 0:
                problems.append(name + " must be non-negative, got " + str(getattr(self, name)))
        return problems


def format_value(value) -> str:
    """
    Format a configuration value for a config file

    Parameters
    ----------
    value: bool, int, float, str or tuple
        The value

    Returns
    -------
    str
        The text form read back by :func:`build_run_config`
    """
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, kind) -> object:
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in _TRUE:
            return True
        if raw.lower() in _FALSE:
            return False
        raise ValueError("expected true/false/yes/no/1/0")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    if typing.get_origin(kind) is tuple:
        element = typing.get_args(kind)[0]
        return tuple(_parse_value(part, element) for part in raw.split(",") if part.strip())
    raise ValueError("unsupported type " + str(kind))


def read_config_file(file_name: str) -> dict[str, str]:
    """
    Read a flat `key = value` file

    Parameters
    ----------
    file_name: str
        The path to read; `#` starts a comment

    Returns
    -------
    dict[str, str]
        Raw values by key
    """
    if not os.path.exists(file_name):
        raise ConfigError(["config file " + file_name + " does not exist"])
    values: dict[str, str] = {}
    problems = []
    with open(file_name) as f:
        for number, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                problems.append(file_name + ":" + str(number) + ": expected key = value")
                continue
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    if problems:
        raise ConfigError(problems)
    return values


def build_run_config(
    file_values: Optional[dict[str, str]] = None,
    overrides: Optional[dict[str, str]] = None,
    seed: Optional[int] = None,
    out: Optional[str] = None,
) -> RunConfig:
    """
    Layer raw values over the defaults and validate the result

    Parameters
    ----------
    file_values: dict[str, str], optional
        Values read from a config file
    overrides: dict[str, str], optional
        `--set` values, winning over the file
    seed: int, optional
        `--seed`, winning over everything
    out: str, optional
        `--out`, winning over everything

    Returns
    -------
    RunConfig
        The validated configuration
    """
    hints = typing.get_type_hints(RunConfig)
    values: dict[str, object] = {}
    problems = []
    for source in (file_values or {}, overrides or {}):
        for key, raw in source.items():
            if key not in hints:
                problems.append("unknown key " + key)
                continue
            try:
                values[key] = _parse_value(raw, hints[key])
            except ValueError as error:
                problems.append(key + ": cannot parse " + repr(raw) + " (" + str(error) + ")")
    if seed is not None:
        values["seed"] = seed
    if out is not None:
        values["out"] = out
    if problems:
        raise ConfigError(problems)
    config = RunConfig(**values)
    problems = config.violations()
    if problems:
        raise ConfigError(problems)
    return config


def write_config(config: RunConfig, file_name: str) -> None:
    """
    Write a configuration in the format :func:`read_config_file` reads

    Parameters
    ----------
    config: RunConfig
        The configuration
    file_name: str
        The path to write to

    Returns
    -------
    None
    """
    with open(file_name, "w") as f:
        f.write("# effective dcgnet configuration\n")
        for key, value in config.snapshot().items():
            f.write(key + " = " + value + "\n")
