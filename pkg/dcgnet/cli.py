"""Command-line entry point.

Every subcommand reads the layered run configuration, echoes it to
`<out>/effective_config.txt` and consumes the artifacts earlier stages wrote:

    dcgnet hierarchy   template -> hierarchy manifest
    dcgnet gendata     hierarchy -> synthetic dataset with an occluded test split
    dcgnet pretrain    dataset -> shape completion checkpoint
    dcgnet train       dataset (+ init checkpoint) -> best and last checkpoints
    dcgnet eval        checkpoint + dataset -> metrics and a markdown report
    dcgnet infer       checkpoint + sample -> predicted mesh as OBJ
    dcgnet gradcheck   finite-difference check of every layer and the network
    dcgnet ablate      component and masking ablation over several seeds
"""

import argparse
import dataclasses
import logging
import os
import sys
from typing import Callable, Optional, Sequence

import pandas

import dcgnet.report

from dcgnet import gradcheck
from dcgnet.coarsen import MeshHierarchy, build_hierarchy, load_hierarchy, save_hierarchy
from dcgnet.config import RunConfig, build_run_config, read_config_file, write_config
from dcgnet.data import (
    Dataset,
    body_template,
    generate_dataset,
    generate_occluded_split,
    load_dataset,
    load_sample,
)
from dcgnet.errors import ConfigError, DatasetError, DCGNetError
from dcgnet.mesh import load_obj, save_obj
from dcgnet.network import DCGNet
from dcgnet.train import (
    evaluate_model,
    load_checkpoint,
    predict,
    pretrain,
    save_checkpoint,
    train_main,
)

logger = logging.getLogger("dcgnet")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

ABLATION_VARIANTS = ("U", "A", "A+U", "A+U+pretrain")


def configure_logging() -> None:
    """Attach a stderr handler to the `dcgnet` logger at the `DCGNET_LOG` level"""
    name = os.environ.get("DCGNET_LOG", "info").strip().lower()
    if name not in LOG_LEVELS:
        raise ConfigError(["DCGNET_LOG must be one of error, info, debug, got " + repr(name)])
    logger.setLevel(LOG_LEVELS[name])
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)


def _ensure_exists(path: str, what: str, producer: Optional[str] = None) -> None:
    if not os.path.exists(path):
        message = what + " " + path + " does not exist"
        if producer is not None:
            message += ", run `dcgnet " + producer + "` first"
        raise ConfigError([message])


def _subdirectory(config: RunConfig, name: str) -> str:
    directory = os.path.join(config.out, name)
    os.makedirs(directory, exist_ok=True)
    return directory


def _load_hierarchy(config: RunConfig) -> MeshHierarchy:
    _ensure_exists(config.hierarchy_path, "hierarchy manifest", "hierarchy")
    return load_hierarchy(config.hierarchy_path)


def _load_inputs(config: RunConfig) -> tuple[MeshHierarchy, Dataset]:
    hierarchy = _load_hierarchy(config)
    _ensure_exists(config.dataset_path, "dataset", "gendata")
    dataset = load_dataset(config.dataset_path)
    if dataset.template.number_of_vertices != hierarchy.node_counts[0]:
        raise DatasetError(
            "dataset template has "
            + str(dataset.template.number_of_vertices)
            + " vertices but the hierarchy's finest level has "
            + str(hierarchy.node_counts[0])
        )
    return hierarchy, dataset


def _build_network(config: RunConfig, hierarchy: MeshHierarchy, dataset: Dataset, **changes) -> DCGNet:
    if dataset.manifest.k_feat != config.k_feat:
        logger.warning(
            "dataset has k_feat %d, overriding the configured %d",
            dataset.manifest.k_feat,
            config.k_feat,
        )
    network_config = dataclasses.replace(
        config.network_config(), in_features=3 + dataset.manifest.k_feat, **changes
    )
    return DCGNet(hierarchy, network_config)


def _load_trained(config: RunConfig) -> tuple[DCGNet, Dataset]:
    hierarchy, dataset = _load_inputs(config)
    net = _build_network(config, hierarchy, dataset)
    _ensure_exists(config.checkpoint_path, "checkpoint", "train")
    load_checkpoint(config.checkpoint_path).restore(net)
    return net, dataset


def cmd_hierarchy(config: RunConfig) -> int:
    """Build the mesh hierarchy of the template and write its manifest"""
    if config.template:
        _ensure_exists(config.template, "template")
        template = load_obj(config.template)
    else:
        template = body_template(config.template_vertices)
    hierarchy = build_hierarchy(template, config.levels, config.factor)
    os.makedirs(os.path.dirname(os.path.abspath(config.hierarchy_path)), exist_ok=True)
    save_hierarchy(hierarchy, config.hierarchy_path)
    logger.info(
        "wrote hierarchy %s with node counts %s",
        config.hierarchy_path,
        " -> ".join(str(n) for n in hierarchy.node_counts),
    )
    print(config.hierarchy_path)
    return 0


def cmd_gendata(config: RunConfig) -> int:
    """Generate the synthetic dataset on the finest hierarchy level"""
    hierarchy = _load_hierarchy(config)
    manifest = generate_dataset(
        hierarchy.levels[0],
        config.count,
        config.data_seed,
        config.deform_scale,
        config.dataset_path,
        noise_scale=config.noise_scale,
        k_feat=config.k_feat,
        hierarchy_path=config.hierarchy_path,
    )
    generate_occluded_split(manifest, config.occlusion_fraction, seed=config.data_seed)
    print(manifest.manifest_path)
    return 0


def cmd_pretrain(config: RunConfig) -> int:
    """Shape completion pretraining"""
    hierarchy, dataset = _load_inputs(config)
    net = _build_network(config, hierarchy, dataset)
    result = pretrain(net, dataset, config.train_config(), config.snapshot())
    directory = _subdirectory(config, "pretrain")
    path = os.path.join(directory, "pretrain.ckpt")
    save_checkpoint(result.last, path)
    result.history.to_csv(os.path.join(directory, "log.csv"), index=False)
    if len(result.history):
        logger.info(
            "completion loss went from %.6f to %.6f",
            result.history["loss"].iloc[0],
            result.history["loss"].iloc[-1],
        )
    print(path)
    return 0


def cmd_train(config: RunConfig) -> int:
    """Supervised training, optionally from a pretraining or earlier main checkpoint"""
    hierarchy, dataset = _load_inputs(config)
    net = _build_network(config, hierarchy, dataset)
    init = None
    if config.init_checkpoint:
        _ensure_exists(config.init_checkpoint, "init checkpoint", "pretrain")
        init = load_checkpoint(config.init_checkpoint)
    result = train_main(net, dataset, config.train_config(), init, config.snapshot())
    directory = _subdirectory(config, "train")
    save_checkpoint(result.best, os.path.join(directory, "best.ckpt"))
    save_checkpoint(result.last, os.path.join(directory, "last.ckpt"))
    result.history.to_csv(os.path.join(directory, "log.csv"), index=False)
    result.evaluations.to_csv(os.path.join(directory, "eval_log.csv"), index=False)
    print(os.path.join(directory, "best.ckpt"))
    return 0


def cmd_eval(config: RunConfig) -> int:
    """Evaluate a checkpoint on one split and write the metric files and report"""
    net, dataset = _load_trained(config)
    samples = dataset.split(config.eval_split)
    if not samples:
        raise DatasetError("split " + config.eval_split + " is empty")
    report = evaluate_model(net, samples, dataset.regressor, config.coordinate_scale)
    directory = _subdirectory(config, "eval")
    report.write(directory, stem="eval")

    history = None
    log_path = os.path.join(os.path.dirname(config.checkpoint_path), "log.csv")
    if os.path.exists(log_path):
        history = pandas.read_csv(log_path)
    dcgnet.report.report_to_md(
        os.path.join(directory, "report.md"),
        report,
        net,
        history,
        split=config.eval_split,
    )
    dcgnet.report.print_report(report, split=config.eval_split)
    return 0


def cmd_infer(config: RunConfig) -> int:
    """Predict the mesh of one sample and write it with the template faces"""
    net, dataset = _load_trained(config)
    if config.sample:
        _ensure_exists(config.sample, "sample")
        sample = load_sample(config.sample)
    else:
        samples = dataset.split("test")
        if not samples:
            raise DatasetError("the test split is empty and no sample was given")
        sample = samples[0]
    vertices = predict(net, sample, config.coordinate_scale)
    path = os.path.join(_subdirectory(config, "infer"), sample.id + ".obj")
    save_obj(dataset.template.with_vertices(vertices), path)
    logger.info("wrote predicted mesh of %s to %s", sample.id, path)
    print(path)
    return 0


def cmd_gradcheck(config: RunConfig) -> int:
    """Finite-difference check of every layer type and a small network"""
    table = gradcheck.run_suite(seeds=config.gradcheck_seeds)
    table.to_csv(os.path.join(_subdirectory(config, "gradcheck"), "gradcheck.csv"), index=False)
    passed = bool(table["passed"].all())
    worst = float(table["max_rel_error"].max())
    print(("PASS" if passed else "FAIL") + " max relative deviation " + format(worst, ".3e"))
    if not passed:
        logger.error(
            "gradient check failed for %s",
            ", ".join(sorted(set(table.loc[~table["passed"], "case"]))),
        )
        return 1
    return 0


def _ablation_runs(config: RunConfig, node_count: int) -> list[tuple[str, int]]:
    runs = [(variant, 0) for variant in ABLATION_VARIANTS[:3]]
    runs += [(ABLATION_VARIANTS[3], c) for c in config.ablation_mask_counts(node_count)]
    return runs


def _ablation_row(
    config: RunConfig,
    hierarchy: MeshHierarchy,
    dataset: Dataset,
    seed: int,
    variant: str,
    mask_count: int,
) -> dict:
    changes = {"ushape": variant != "A", "adaptive_adjacency": variant != "U", "seed": seed}
    if variant == "A":
        # the flat stack only has level 0
        changes["nonlocal_level"] = None
    net = _build_network(config, hierarchy, dataset, **changes)
    train_config = dataclasses.replace(
        config.train_config(),
        seed=seed,
        mask_seed=seed,
        mask_count=mask_count,
        main_epochs=config.ablate_epochs,
        pretrain_steps=config.ablate_pretrain_steps,
    )
    init = None
    if variant.endswith("pretrain"):
        init = pretrain(net, dataset, train_config).last
    result = train_main(net, dataset, train_config, init)
    result.best.restore(net)

    row = {"seed": seed, "variant": variant, "mask_count": mask_count}
    for split in ("val", "test", "occluded_test"):
        samples = dataset.split(split)
        if samples:
            report = evaluate_model(net, samples, dataset.regressor, train_config.coordinate_scale)
            row[split + "_mpjpe"] = report.mpjpe
            row[split + "_reconst_error"] = report.reconst_error
        else:
            row[split + "_mpjpe"] = float("nan")
            row[split + "_reconst_error"] = float("nan")
    logger.info(
        "ablation seed %d %s mask %d occluded mpjpe %.3f",
        seed,
        variant,
        mask_count,
        row["occluded_test_mpjpe"],
    )
    return row


def cmd_ablate(config: RunConfig) -> int:
    """Component and masking ablation over the configured seeds"""
    hierarchy, dataset = _load_inputs(config)
    runs = _ablation_runs(config, hierarchy.node_counts[0])
    rows = [
        _ablation_row(config, hierarchy, dataset, seed, variant, mask_count)
        for seed in config.ablate_seeds
        for variant, mask_count in runs
    ]
    table = pandas.DataFrame(rows)
    directory = _subdirectory(config, "ablate")
    table.to_csv(os.path.join(directory, "ablation.csv"), index=False)

    metrics = [c for c in table.columns if c.endswith("_mpjpe") or c.endswith("_reconst_error")]
    summary = table.groupby(["variant", "mask_count"], sort=False)[metrics].agg(["mean", "std"])
    summary.columns = [metric + "_" + stat for metric, stat in summary.columns]
    summary = summary.reset_index()
    summary.to_csv(os.path.join(directory, "ablation_summary.csv"), index=False)
    with open(os.path.join(directory, "ablation.md"), "w") as f:
        f.write("# ABLATION OVER " + str(len(config.ablate_seeds)) + " SEEDS\n")
        f.write(summary.to_markdown(index=False) + "\n")
    print(summary.to_markdown(index=False))
    return 0


COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "hierarchy": cmd_hierarchy,
    "gendata": cmd_gendata,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    """
    The argument parser of the `dcgnet` command

    Returns
    -------
    argparse.ArgumentParser
        Parser with one subcommand per entry of `COMMANDS`
    """
    parser = argparse.ArgumentParser(
        prog="dcgnet", description="Graph convolution mesh recovery on synthetic bodies"
    )
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--seed", type=int, help="seed of initialization and batch order")
    parser.add_argument("--out", help="output directory")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration value, repeatable",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, command in COMMANDS.items():
        subparsers.add_parser(name, help=command.__doc__)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """
    The run configuration selected by parsed arguments

    Parameters
    ----------
    args: argparse.Namespace
        Parsed global flags

    Returns
    -------
    RunConfig
        The validated configuration
    """
    overrides = {}
    problems = []
    for item in args.set:
        if "=" not in item:
            problems.append("--set expects key=value, got " + repr(item))
            continue
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if problems:
        raise ConfigError(problems)
    file_values = read_config_file(args.config) if args.config else {}
    return build_run_config(file_values, overrides, seed=args.seed, out=args.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand

    Parameters
    ----------
    argv: Sequence[str], optional
        Arguments without the program name, defaults to `sys.argv[1:]`

    Returns
    -------
    int
        0 on success, the error category's exit code otherwise
    """
    args = build_parser().parse_args(argv)
    try:
        configure_logging()
        config = load_config(args)
        os.makedirs(config.out, exist_ok=True)
        write_config(config, os.path.join(config.out, "effective_config.txt"))
        return COMMANDS[args.command](config)
    except DCGNetError as error:
        logger.error("%s", error)
        return error.exit_code
    except Exception as error:
        logger.error("%s: %s", type(error).__name__, error)
        return 1
