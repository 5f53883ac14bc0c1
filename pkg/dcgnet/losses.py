"""Vertex, 3D joint and 2D joint losses.

Every loss is an L1 distance summed over rows (vertices or joints), where a row
contributes the sum of the absolute differences of its coordinates. The "mean"
reduction divides by the number of rows instead.

Examples
--------
>>> import numpy
>>> from dcgnet import autodiff, losses
>>> gt = numpy.zeros([4, 3])
>>> float(losses.vertex_loss(autodiff.Tensor(gt + [1.0, 0.0, 0.0]), autodiff.Tensor(gt)).data)
4.0
"""

import dataclasses
import logging
from typing import Literal, Sequence

import numpy
import scipy.sparse
from numpy.typing import NDArray

from dcgnet import autodiff
from dcgnet.autodiff import Tensor
from dcgnet.errors import DatasetError, ShapeError
from dcgnet.mesh import SparseMatrix, TriMesh

logger = logging.getLogger(__name__)

Reduction = Literal["sum", "mean"]
"""Type: How per-row L1 distances are combined"""

LANDMARK_NAMES = [
    "x_min",
    "x_max",
    "y_min",
    "y_max",
    "z_min",
    "z_max",
    "front_right",
    "front_left",
    "back_right",
    "back_left",
    "upper_front",
    "center",
]
"""list[str]: Joints of :func:`landmark_regressor`"""

_LANDMARK_DIRECTIONS = [
    [-1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, -1.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [-1.0, 1.0, 0.0],
    [1.0, -1.0, 0.0],
    [-1.0, -1.0, 0.0],
    [0.0, 1.0, 1.0],
]


@dataclasses.dataclass(frozen=True, eq=False)
class JointRegressor:
    """Convex combinations of mesh vertices that define skeleton joints

    Attributes
    ----------
    matrix: SparseMatrix
        (D, N) non-negative matrix whose rows sum to one
    joint_names: list[str]
        One label per joint
    """

    matrix: SparseMatrix
    joint_names: list[str]

    def __post_init__(self):
        matrix = scipy.sparse.csr_matrix(self.matrix, dtype=numpy.float64)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "joint_names", list(self.joint_names))
        if len(self.joint_names) != matrix.shape[0]:
            raise DatasetError(
                str(len(self.joint_names))
                + " joint names for "
                + str(matrix.shape[0])
                + " regressor rows"
            )
        if (matrix.data < 0.0).any():
            raise DatasetError("Joint regressor has negative weights")
        sums = numpy.asarray(matrix.sum(axis=1)).ravel()
        if not numpy.allclose(sums, 1.0, rtol=0.0, atol=1e-9):
            raise DatasetError("Joint regressor rows must sum to one")

    @property
    def number_of_joints(self) -> int:
        """int: Number of joints D"""
        return self.matrix.shape[0]

    @property
    def number_of_vertices(self) -> int:
        """int: Number of mesh vertices N"""
        return self.matrix.shape[1]

    def regress_array(self, coordinates: NDArray[float]) -> NDArray[float]:
        """
        Joints of a coordinate array, without differentiation

        Parameters
        ----------
        coordinates: NDArray[float]
            (N, 3) vertex coordinates

        Returns
        -------
        NDArray[float]
            (D, 3) joints
        """
        return numpy.asarray(self.matrix @ coordinates)


def landmark_regressor(mesh: TriMesh) -> JointRegressor:
    """
    Twelve one-hot joints picked from the geometry of a mesh

    The first eleven joints are the vertices most extreme along fixed directions;
    the last is the vertex nearest the centroid. No vertex is picked twice.

    Parameters
    ----------
    mesh: TriMesh
        A mesh with at least twelve vertices

    Returns
    -------
    JointRegressor
        A (12, N) selection matrix
    """
    vertices = mesh.vertices
    if len(vertices) < len(LANDMARK_NAMES):
        raise DatasetError(
            "a landmark regressor needs at least "
            + str(len(LANDMARK_NAMES))
            + " vertices, got "
            + str(len(vertices))
        )
    chosen: list[int] = []
    for direction in _LANDMARK_DIRECTIONS:
        scores = vertices @ numpy.array(direction)
        # stable sort keeps the smaller index on ties
        for index in numpy.argsort(-scores, kind="stable"):
            if int(index) not in chosen:
                chosen.append(int(index))
                break
    distances = numpy.linalg.norm(vertices - vertices.mean(axis=0), axis=1)
    for index in numpy.argsort(distances, kind="stable"):
        if int(index) not in chosen:
            chosen.append(int(index))
            break

    matrix = scipy.sparse.csr_matrix(
        (numpy.ones(len(chosen)), (numpy.arange(len(chosen)), chosen)),
        shape=(len(chosen), len(vertices)),
    )
    return JointRegressor(matrix, LANDMARK_NAMES)


def save_regressor(regressor: JointRegressor, file_name: str) -> None:
    """
    Write a regressor as a "D N" header and "row col value" triplets

    Parameters
    ----------
    regressor: JointRegressor
        The regressor
    file_name: str
        The path to write to

    Returns
    -------
    None
    """
    coo = regressor.matrix.tocoo()
    with open(file_name, "w") as f:
        f.write(str(regressor.number_of_joints) + " " + str(regressor.number_of_vertices) + "\n")
        f.write("# joints " + " ".join(regressor.joint_names) + "\n")
        for row, col, value in sorted(zip(coo.row, coo.col, coo.data)):
            f.write(str(row) + " " + str(col) + " " + repr(float(value)) + "\n")


def load_regressor(file_name: str) -> JointRegressor:
    """
    Read a regressor written by :func:`save_regressor`

    Parameters
    ----------
    file_name: str
        The path to read

    Returns
    -------
    JointRegressor
        The regressor, joints named "joint_<i>" when the file carries no names
    """
    names = None
    triplets = []
    shape = None
    with open(file_name) as f:
        for number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "#":
                if len(tokens) > 1 and tokens[1] == "joints":
                    names = tokens[2:]
                continue
            try:
                if shape is None:
                    shape = (int(tokens[0]), int(tokens[1]))
                else:
                    triplets.append((int(tokens[0]), int(tokens[1]), float(tokens[2])))
            except (ValueError, IndexError):
                raise DatasetError(
                    file_name + ":" + str(number) + ": malformed regressor line"
                )
    if shape is None:
        raise DatasetError(file_name + ": missing regressor header")
    rows, cols, values = zip(*triplets) if triplets else ((), (), ())
    if any(r >= shape[0] or c >= shape[1] for r, c in zip(rows, cols)):
        raise DatasetError(file_name + ": regressor index outside declared shape")
    matrix = scipy.sparse.csr_matrix((values, (rows, cols)), shape=shape)
    if names is None:
        names = ["joint_" + str(i) for i in range(shape[0])]
    return JointRegressor(matrix, names)


@dataclasses.dataclass(frozen=True)
class Camera:
    """Weak-perspective camera

    Attributes
    ----------
    scale: float
        Positive image scale
    translation: tuple[float, float]
        Image-plane offset
    """

    scale: float
    translation: tuple[float, float]

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError("Camera scale must be positive, got " + str(self.scale))
        object.__setattr__(
            self, "translation", tuple(float(t) for t in self.translation)
        )
        if len(self.translation) != 2:
            raise ValueError("Camera translation must have two entries")

    def project_array(self, joints3d: NDArray[float]) -> NDArray[float]:
        """
        Project joints without differentiation

        Parameters
        ----------
        joints3d: NDArray[float]
            (D, 3) joints

        Returns
        -------
        NDArray[float]
            (D, 2) image coordinates scale * (x, y) + translation
        """
        return self.scale * joints3d[:, :2] + numpy.array(self.translation)

    def rescaled(self, factor: float) -> "Camera":
        """
        The camera for coordinates divided by `factor`

        Parameters
        ----------
        factor: float
            Divisor applied to 3D and 2D coordinates alike

        Returns
        -------
        Camera
            Same scale, translation divided by `factor`
        """
        return Camera(self.scale, tuple(t / factor for t in self.translation))


def _l1(pred: Tensor, gt: Tensor, reduction: Reduction, op: str) -> Tensor:
    if pred.shape != gt.shape or pred.data.ndim != 2:
        raise ShapeError(op, pred.shape, gt.shape)
    total = autodiff.l1_norm(autodiff.sub(pred, gt))
    if reduction == "sum":
        return total
    if reduction == "mean":
        return autodiff.scale(total, 1.0 / pred.shape[0])
    raise ValueError("Unknown reduction " + str(reduction))


def vertex_loss(pred: Tensor, gt: Tensor, reduction: Reduction = "sum") -> Tensor:
    """
    Vertex-wise L1 distance

    Parameters
    ----------
    pred: Tensor
        (N, 3) predicted coordinates
    gt: Tensor
        (N, 3) ground truth
    reduction: "sum" or "mean", default="sum"
        Combination over vertices

    Returns
    -------
    Tensor
        Scalar loss
    """
    return _l1(pred, gt, reduction, "vertex_loss")


def regress_joints(mesh_coords: Tensor, reg: JointRegressor) -> Tensor:
    """
    Joints of predicted mesh coordinates

    Parameters
    ----------
    mesh_coords: Tensor
        (N, 3) coordinates
    reg: JointRegressor
        The regressor

    Returns
    -------
    Tensor
        (D, 3) joints
    """
    return autodiff.sparse_matmul(reg.matrix, mesh_coords)


def joint3d_loss(
    pred_mesh: Tensor,
    gt_joints: Tensor,
    reg: JointRegressor,
    reduction: Reduction = "sum",
) -> Tensor:
    """L1 distance between regressed and ground-truth 3D joints"""
    return _l1(regress_joints(pred_mesh, reg), gt_joints, reduction, "joint3d_loss")


def project(joints3d: Tensor, cam: Camera) -> Tensor:
    """
    Weak-perspective projection, z is dropped

    Parameters
    ----------
    joints3d: Tensor
        (D, 3) joints
    cam: Camera
        The camera

    Returns
    -------
    Tensor
        (D, 2) image coordinates
    """
    planar = autodiff.scale(autodiff.slice_cols(joints3d, 0, 2), cam.scale)
    return autodiff.add(planar, autodiff.constant([list(cam.translation)]))


def joint2d_loss(
    pred_mesh: Tensor,
    gt_joints2d: Tensor,
    reg: JointRegressor,
    cam: Camera,
    reduction: Reduction = "sum",
) -> Tensor:
    """L1 distance between projected regressed joints and ground-truth 2D joints"""
    return _l1(
        project(regress_joints(pred_mesh, reg), cam),
        gt_joints2d,
        reduction,
        "joint2d_loss",
    )


def loss_terms(
    pred_mesh: Tensor,
    gt_mesh: Tensor,
    gt_joints3d: Tensor,
    gt_joints2d: Tensor,
    reg: JointRegressor,
    cam: Camera,
    reduction: Reduction = "sum",
) -> dict[str, Tensor]:
    """
    The three supervised losses

    Returns
    -------
    dict[str, Tensor]
        "vertex", "joint3d" and "joint2d" scalar losses
    """
    return {
        "vertex": vertex_loss(pred_mesh, gt_mesh, reduction),
        "joint3d": joint3d_loss(pred_mesh, gt_joints3d, reg, reduction),
        "joint2d": joint2d_loss(pred_mesh, gt_joints2d, reg, cam, reduction),
    }


def total_loss(
    pred_mesh: Tensor,
    gt_mesh: Tensor,
    gt_joints3d: Tensor,
    gt_joints2d: Tensor,
    reg: JointRegressor,
    cam: Camera,
    weights: Sequence[float] = (1.0, 1.0, 1.0),
    reduction: Reduction = "sum",
) -> Tensor:
    """
    Weighted sum of the vertex, 3D joint and 2D joint losses

    Parameters
    ----------
    pred_mesh: Tensor
        (N, 3) prediction
    gt_mesh: Tensor
        (N, 3) ground truth
    gt_joints3d: Tensor
        (D, 3) ground-truth joints
    gt_joints2d: Tensor
        (D, 2) ground-truth image joints
    reg: JointRegressor
        Mesh to joint map
    cam: Camera
        Projection of the sample
    weights: Sequence[float], default=(1.0, 1.0, 1.0)
        Weights of the vertex, 3D and 2D terms
    reduction: "sum" or "mean", default="sum"
        Combination over rows in every term

    Returns
    -------
    Tensor
        Scalar loss
    """
    return weighted_total(
        loss_terms(pred_mesh, gt_mesh, gt_joints3d, gt_joints2d, reg, cam, reduction),
        weights,
    )


def weighted_total(terms: dict[str, Tensor], weights: Sequence[float]) -> Tensor:
    """
    Combine the output of :func:`loss_terms`

    Parameters
    ----------
    terms: dict[str, Tensor]
        The three losses
    weights: Sequence[float]
        Weights of the vertex, 3D and 2D terms

    Returns
    -------
    Tensor
        Scalar loss
    """
    if len(weights) != 3:
        raise ValueError("Expected three loss weights, got " + str(len(weights)))
    total = autodiff.scale(terms["vertex"], float(weights[0]))
    total = autodiff.add(total, autodiff.scale(terms["joint3d"], float(weights[1])))
    return autodiff.add(total, autodiff.scale(terms["joint2d"], float(weights[2])))
