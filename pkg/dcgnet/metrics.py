"""Joint position metrics and evaluation reports.

Examples
--------
>>> import numpy
>>> from dcgnet import metrics
>>> gt = numpy.zeros([5, 3])
>>> metrics.mpjpe(gt + [3.0, 4.0, 0.0], gt)
5.0
>>> metrics.pck(gt + [3.0, 4.0, 0.0], gt, threshold=5.0)
1.0
"""

import dataclasses
import logging
import os
from typing import Optional, Sequence, Union

import numpy
import pandas
from numpy.typing import NDArray

from dcgnet.autodiff import Tensor
from dcgnet.errors import ShapeError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = numpy.linspace(0.0, 150.0, 31)
"""NDArray[float]: PCK thresholds in millimetres averaged by :func:`auc`"""

DEFAULT_PCK_THRESHOLD = 150.0
"""float: PCK threshold in millimetres reported by :func:`evaluate`"""

ALIGNMENT = "similarity (rotation, uniform scale, translation; reflections excluded)"

Poses = Union[NDArray[float], Tensor]


def _pair(pred: Poses, gt: Poses, op: str) -> tuple[NDArray[float], NDArray[float]]:
    pred = pred.data if isinstance(pred, Tensor) else numpy.asarray(pred, dtype=float)
    gt = gt.data if isinstance(gt, Tensor) else numpy.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeError(op, pred.shape, gt.shape)
    return pred, gt


def joint_errors(pred: Poses, gt: Poses) -> NDArray[float]:
    """
    Euclidean distance of every joint

    Parameters
    ----------
    pred: NDArray[float] or Tensor
        (D, 3) predicted joints
    gt: NDArray[float] or Tensor
        (D, 3) ground truth

    Returns
    -------
    NDArray[float]
        (D,) distances
    """
    pred, gt = _pair(pred, gt, "joint_errors")
    return numpy.linalg.norm(pred - gt, axis=1)


def mpjpe(pred: Poses, gt: Poses) -> float:
    """
    Mean per-joint position error

    Parameters
    ----------
    pred: NDArray[float] or Tensor
        (D, 3) predicted joints
    gt: NDArray[float] or Tensor
        (D, 3) ground truth

    Returns
    -------
    float
        Mean Euclidean joint distance
    """
    return float(numpy.mean(joint_errors(pred, gt)))


def procrustes_align(pred: Poses, gt: Poses) -> NDArray[float]:
    """
    Best similarity transform of a prediction onto the ground truth

    Parameters
    ----------
    pred: NDArray[float] or Tensor
        (D, 3) predicted joints, D >= 3
    gt: NDArray[float] or Tensor
        (D, 3) ground truth, not all on one line

    Returns
    -------
    NDArray[float]
        s R pred + t minimizing the squared distance to `gt`, with R a proper
        rotation. A prediction with no spread maps every joint to the mean of
        `gt`.
    """
    pred, gt = _pair(pred, gt, "procrustes_align")
    if len(pred) < 3:
        raise ValueError("Procrustes alignment needs at least 3 joints")
    pred_mean = pred.mean(axis=0)
    gt_mean = gt.mean(axis=0)
    p = pred - pred_mean
    g = gt - gt_mean
    spread = numpy.linalg.svd(g, compute_uv=False)
    if spread[0] == 0.0 or spread[1] <= 1e-12 * spread[0]:
        raise ValueError("Procrustes alignment is undetermined for a degenerate ground truth")

    variance = numpy.sum(p**2)
    if variance == 0.0:
        return numpy.tile(gt_mean, (len(gt), 1))
    # rank-deficient covariances leave the rotation non-unique but the fit optimal
    u, s, vt = numpy.linalg.svd(g.T @ p)
    sign = numpy.ones(3)
    sign[2] = numpy.sign(numpy.linalg.det(u @ vt)) or 1.0
    rotation = (u * sign) @ vt
    scale = numpy.sum(s * sign) / variance
    return scale * p @ rotation.T + gt_mean


def reconstruction_error(pred: Poses, gt: Poses) -> float:
    """
    MPJPE after :func:`procrustes_align`, never above the unaligned MPJPE

    The similarity fit minimizes squared error, so a pose with an outlier
    joint can end up with a larger mean distance than the identity; the
    smaller of the two is reported.

    >>> gt = numpy.eye(3)
    >>> reconstruction_error(2.0 * gt + 1.0, gt) < 1e-12
    True
    """
    pred, gt = _pair(pred, gt, "reconstruction_error")
    return min(mpjpe(procrustes_align(pred, gt), gt), mpjpe(pred, gt))


def pck(pred: Poses, gt: Poses, threshold: float) -> float:
    """
    Fraction of joints within a distance

    Parameters
    ----------
    pred: NDArray[float] or Tensor
        (D, 3) predicted joints
    gt: NDArray[float] or Tensor
        (D, 3) ground truth
    threshold: float
        Positive distance, a joint exactly at the threshold counts as correct

    Returns
    -------
    float
        Value in [0, 1]
    """
    if not threshold > 0.0:
        raise ValueError("PCK threshold must be positive, got " + str(threshold))
    return float(numpy.mean(joint_errors(pred, gt) <= threshold))


def auc(pred: Poses, gt: Poses, thresholds: Optional[Sequence[float]] = None) -> float:
    """
    Mean PCK over a ladder of thresholds

    Parameters
    ----------
    pred: NDArray[float] or Tensor
        (D, 3) predicted joints
    gt: NDArray[float] or Tensor
        (D, 3) ground truth
    thresholds: Sequence[float], optional
        Non-negative thresholds, defaults to 0 to 150 in 31 steps

    Returns
    -------
    float
        Value in [0, 1]
    """
    thresholds = DEFAULT_THRESHOLDS if thresholds is None else numpy.asarray(thresholds, dtype=float)
    if len(thresholds) == 0:
        raise ValueError("AUC needs at least one threshold")
    if (thresholds < 0.0).any():
        raise ValueError("AUC thresholds must be non-negative")
    errors = joint_errors(pred, gt)
    return float(numpy.mean([numpy.mean(errors <= t) for t in thresholds]))


@dataclasses.dataclass
class EvalReport:
    """Metrics of a set of predictions

    Attributes
    ----------
    mpjpe: float
        Mean per-joint position error over all samples
    reconst_error: float
        Mean error after similarity alignment
    pck: float
        Mean PCK at `pck_threshold`
    auc: float
        Mean AUC
    per_sample: pandas.DataFrame
        One row per sample with columns "id", "mpjpe", "reconst_error", "pck",
        "auc" and "vertex_error"
    pck_threshold: float, default=150.0
        Threshold of `pck`
    """

    mpjpe: float
    reconst_error: float
    pck: float
    auc: float
    per_sample: pandas.DataFrame
    pck_threshold: float = DEFAULT_PCK_THRESHOLD

    @property
    def vertex_error(self) -> float:
        """float: Mean per-vertex Euclidean error over all samples"""
        return float(self.per_sample["vertex_error"].mean())

    def summary(self) -> dict[str, float]:
        """
        The aggregate metrics

        Returns
        -------
        dict[str, float]
            Metric values by name
        """
        return {
            "samples": len(self.per_sample),
            "mpjpe": self.mpjpe,
            "reconst_error": self.reconst_error,
            "pck": self.pck,
            "pck_threshold": self.pck_threshold,
            "auc": self.auc,
            "vertex_error": self.vertex_error,
        }

    def write(self, directory: str, stem: str = "eval") -> tuple[str, str]:
        """
        Save as a key-value text file and a per-sample CSV

        Parameters
        ----------
        directory: str
            Existing output directory
        stem: str, default="eval"
            File name stem

        Returns
        -------
        tuple[str, str]
            Paths of the text file and the CSV
        """
        text_path = os.path.join(directory, stem + ".txt")
        csv_path = os.path.join(directory, stem + "_per_sample.csv")
        with open(text_path, "w") as f:
            f.write("# alignment " + ALIGNMENT + "\n")
            for key, value in self.summary().items():
                f.write(key + " = " + repr(value) + "\n")
        self.per_sample.to_csv(csv_path, index=False)
        logger.info("wrote evaluation report to %s", text_path)
        return text_path, csv_path


def evaluate(
    ids: Sequence[str],
    pred_joints: Sequence[NDArray[float]],
    gt_joints: Sequence[NDArray[float]],
    pred_meshes: Sequence[NDArray[float]],
    gt_meshes: Sequence[NDArray[float]],
    pck_threshold: float = DEFAULT_PCK_THRESHOLD,
    thresholds: Optional[Sequence[float]] = None,
) -> EvalReport:
    """
    Metrics of predicted joints and meshes

    Parameters
    ----------
    ids: Sequence[str]
        Sample identifiers
    pred_joints: Sequence[NDArray[float]]
        (D, 3) predicted joints per sample
    gt_joints: Sequence[NDArray[float]]
        (D, 3) ground-truth joints per sample
    pred_meshes: Sequence[NDArray[float]]
        (N, 3) predicted vertices per sample
    gt_meshes: Sequence[NDArray[float]]
        (N, 3) ground-truth vertices per sample
    pck_threshold: float, default=150.0
        Threshold of the reported PCK
    thresholds: Sequence[float], optional
        AUC threshold ladder

    Returns
    -------
    EvalReport
        Sample means and the per-sample table
    """
    if not len(ids) == len(pred_joints) == len(gt_joints) == len(pred_meshes) == len(gt_meshes):
        raise ValueError("Evaluation inputs must have one entry per sample")
    if len(ids) == 0:
        raise ValueError("Nothing to evaluate")
    rows = []
    for sample_id, pj, gj, pm, gm in zip(ids, pred_joints, gt_joints, pred_meshes, gt_meshes):
        rows.append(
            {
                "id": sample_id,
                "mpjpe": mpjpe(pj, gj),
                "reconst_error": reconstruction_error(pj, gj),
                "pck": pck(pj, gj, pck_threshold),
                "auc": auc(pj, gj, thresholds),
                "vertex_error": float(numpy.mean(joint_errors(pm, gm))),
            }
        )
    table = pandas.DataFrame(rows)
    return EvalReport(
        mpjpe=float(table["mpjpe"].mean()),
        reconst_error=float(table["reconst_error"].mean()),
        pck=float(table["pck"].mean()),
        auc=float(table["auc"].mean()),
        per_sample=table,
        pck_threshold=pck_threshold,
    )
