"""Synthetic body-like meshes with joints, cameras and noisy input features.

A dataset directory holds the template OBJ, the joint regressor, one text file per
sample and a line-oriented manifest indexing them by split. Generation is a pure
function of its arguments, so the same seed writes identical files.

Examples
--------
>>> import dcgnet
>>> template = dcgnet.body_template()
>>> template.number_of_vertices
432
"""

import dataclasses
import logging
import os
from typing import Optional

import numpy
import scipy.spatial.transform
from numpy.typing import NDArray

from dcgnet.coarsen import decimate, load_hierarchy
from dcgnet.completion import MaskSpec, masked_rows
from dcgnet.errors import DatasetError
from dcgnet.losses import (
    Camera,
    JointRegressor,
    landmark_regressor,
    load_regressor,
    save_regressor,
)
from dcgnet.mesh import TriMesh, icosphere, load_obj, save_obj

logger = logging.getLogger(__name__)

MANIFEST_HEADER = "dcgnet-dataset v1"
SPLITS = ("train", "val", "test", "occluded_test")

# body half-extents in millimetres: width, height, depth
_BODY_EXTENTS = numpy.array([350.0, 900.0, 200.0])

# unit directions of head, arms and legs with bump amplitude and width
_LIMBS = [
    ([0.0, 1.0, 0.0], 0.35, 0.35),
    ([0.9, 0.3, 0.0], 0.9, 0.3),
    ([-0.9, 0.3, 0.0], 0.9, 0.3),
    ([0.35, -1.0, 0.0], 0.45, 0.3),
    ([-0.35, -1.0, 0.0], 0.45, 0.3),
]


def body_template(vertex_count: int = 432) -> TriMesh:
    """
    A closed, body-like template mesh in millimetres

    A subdivided icosahedron gets radial bumps for a head, two arms and two legs,
    is stretched into a tall ellipsoid and decimated to the requested size.

    Parameters
    ----------
    vertex_count: int, default=432
        Number of template vertices, below 642

    Returns
    -------
    TriMesh
        The template
    """
    sphere = icosphere(3)
    unit = sphere.vertices
    radius = numpy.ones(len(unit))
    for direction, amplitude, width in _LIMBS:
        direction = numpy.array(direction) / numpy.linalg.norm(direction)
        distance = numpy.linalg.norm(unit - direction, axis=1)
        radius += amplitude * numpy.exp(-(distance**2) / (2.0 * width**2))
    body = sphere.with_vertices(unit * radius[:, None] * _BODY_EXTENTS / radius.max())
    template, _ = decimate(body, vertex_count)
    return template


@dataclasses.dataclass
class Sample:
    """One training or test example

    Attributes
    ----------
    id: str
        Unique identifier
    input_features: NDArray[float]
        (N, 3 + k_feat) noisy coordinates followed by projection features
    gt_mesh: NDArray[float]
        (N, 3) ground-truth vertices in millimetres
    gt_joints3d: NDArray[float]
        (D, 3) regressor applied to `gt_mesh`
    gt_joints2d: NDArray[float]
        (D, 2) `gt_joints3d` projected by `camera`
    camera: Camera
        Weak-perspective camera
    """

    id: str
    input_features: NDArray[float]
    gt_mesh: NDArray[float]
    gt_joints3d: NDArray[float]
    gt_joints2d: NDArray[float]
    camera: Camera


def _write_block(f, label: str, matrix: NDArray[float]) -> None:
    f.write(label + " " + str(matrix.shape[0]) + " " + str(matrix.shape[1]) + "\n")
    for row in matrix:
        f.write(" ".join(repr(float(x)) for x in row) + "\n")


def save_sample(sample: Sample, file_name: str) -> None:
    """
    Write a sample as a text header followed by labeled matrix blocks

    Parameters
    ----------
    sample: Sample
        The sample
    file_name: str
        The path to write to

    Returns
    -------
    None
    """
    with open(file_name, "w") as f:
        f.write("id " + sample.id + "\n")
        f.write("camera_scale " + repr(float(sample.camera.scale)) + "\n")
        f.write(
            "camera_translation "
            + " ".join(repr(float(t)) for t in sample.camera.translation)
            + "\n"
        )
        _write_block(f, "features", sample.input_features)
        _write_block(f, "gt_mesh", sample.gt_mesh)
        _write_block(f, "gt_joints3d", sample.gt_joints3d)
        _write_block(f, "gt_joints2d", sample.gt_joints2d)
        f.write("end\n")


def load_sample(file_name: str) -> Sample:
    """
    Read a sample written by :func:`save_sample`

    Parameters
    ----------
    file_name: str
        The path to read

    Returns
    -------
    Sample
        The sample, values reproduced bit-exactly
    """
    header: dict[str, list[str]] = {}
    blocks: dict[str, NDArray[float]] = {}
    try:
        with open(file_name) as f:
            lines = iter(f.read().splitlines())
    except OSError as error:
        raise DatasetError(file_name + ": " + str(error))
    try:
        for line in lines:
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "end":
                break
            if tokens[0] in ("features", "gt_mesh", "gt_joints3d", "gt_joints2d"):
                rows, cols = int(tokens[1]), int(tokens[2])
                values = [[float(x) for x in next(lines).split()] for _ in range(rows)]
                block = numpy.array(values, dtype=numpy.float64).reshape(rows, cols)
                blocks[tokens[0]] = block
            else:
                header[tokens[0]] = tokens[1:]
        sample = Sample(
            id=header["id"][0],
            input_features=blocks["features"],
            gt_mesh=blocks["gt_mesh"],
            gt_joints3d=blocks["gt_joints3d"],
            gt_joints2d=blocks["gt_joints2d"],
            camera=Camera(
                float(header["camera_scale"][0]),
                tuple(float(t) for t in header["camera_translation"]),
            ),
        )
    except (KeyError, IndexError, ValueError, StopIteration) as error:
        raise DatasetError(file_name + ": malformed sample file (" + str(error) + ")")
    return sample


@dataclasses.dataclass
class DatasetManifest:
    """Index of a generated dataset

    Paths are stored relative to `directory`.

    Attributes
    ----------
    directory: str
        Dataset directory holding the manifest
    template_path: str
        Template OBJ
    hierarchy_path: str or None
        Hierarchy manifest the dataset was checked against
    regressor_path: str
        Joint regressor
    sample_paths: dict[str, list[str]]
        Sample files of every split
    generator_seed: int
        Seed of :func:`generate_dataset`
    deform_scale: float
        Deformation amplitude relative to the template diagonal
    noise_scale: float
        Input noise relative to the template diagonal
    k_feat: int
        Projection features per vertex
    occlusion_fraction: float or None
        Fraction of rows hidden in the occluded test split, if generated
    """

    directory: str
    template_path: str
    hierarchy_path: Optional[str]
    regressor_path: str
    sample_paths: dict[str, list[str]]
    generator_seed: int
    deform_scale: float
    noise_scale: float = 0.05
    k_feat: int = 16
    occlusion_fraction: Optional[float] = None

    def path(self, relative: str) -> str:
        """
        Resolve a path stored in the manifest

        Parameters
        ----------
        relative: str
            A path relative to the dataset directory

        Returns
        -------
        str
            The full path
        """
        return os.path.join(self.directory, relative)

    @property
    def manifest_path(self) -> str:
        """str: Location of the manifest file"""
        return os.path.join(self.directory, "manifest.txt")

    def save(self) -> None:
        """Write the manifest file into `directory`"""
        with open(self.manifest_path, "w") as f:
            f.write(MANIFEST_HEADER + "\n")
            f.write("generator_seed " + str(self.generator_seed) + "\n")
            f.write("deform_scale " + repr(float(self.deform_scale)) + "\n")
            f.write("noise_scale " + repr(float(self.noise_scale)) + "\n")
            f.write("k_feat " + str(self.k_feat) + "\n")
            if self.occlusion_fraction is not None:
                f.write("occlusion_fraction " + repr(float(self.occlusion_fraction)) + "\n")
            f.write("template " + self.template_path + "\n")
            if self.hierarchy_path is not None:
                f.write("hierarchy " + self.hierarchy_path + "\n")
            f.write("regressor " + self.regressor_path + "\n")
            for split in SPLITS:
                for sample_path in self.sample_paths.get(split, []):
                    f.write("sample " + split + " " + sample_path + "\n")


def load_manifest(file_name: str) -> DatasetManifest:
    """
    Read a dataset manifest

    Parameters
    ----------
    file_name: str
        Path of `manifest.txt` or of the dataset directory

    Returns
    -------
    DatasetManifest
        The manifest
    """
    if os.path.isdir(file_name):
        file_name = os.path.join(file_name, "manifest.txt")
    if not os.path.exists(file_name):
        raise DatasetError("no dataset manifest at " + file_name)
    fields: dict[str, str] = {}
    sample_paths: dict[str, list[str]] = {split: [] for split in SPLITS}
    with open(file_name) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise DatasetError(file_name + ": not a dataset manifest")
    for line in lines[1:]:
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "sample":
            if len(tokens) != 3 or tokens[1] not in SPLITS:
                raise DatasetError(file_name + ": malformed sample line: " + line)
            sample_paths[tokens[1]].append(tokens[2])
        elif len(tokens) == 2:
            fields[tokens[0]] = tokens[1]
        else:
            raise DatasetError(file_name + ": malformed line: " + line)
    try:
        manifest = DatasetManifest(
            directory=os.path.dirname(os.path.abspath(file_name)),
            template_path=fields["template"],
            hierarchy_path=fields.get("hierarchy"),
            regressor_path=fields["regressor"],
            sample_paths=sample_paths,
            generator_seed=int(fields["generator_seed"]),
            deform_scale=float(fields["deform_scale"]),
            noise_scale=float(fields["noise_scale"]),
            k_feat=int(fields["k_feat"]),
            occlusion_fraction=(
                float(fields["occlusion_fraction"])
                if "occlusion_fraction" in fields
                else None
            ),
        )
    except (KeyError, ValueError) as error:
        raise DatasetError(file_name + ": missing or invalid field " + str(error))
    return manifest


@dataclasses.dataclass
class Dataset:
    """A loaded dataset

    Attributes
    ----------
    manifest: DatasetManifest
        The index
    template: TriMesh
        Template mesh
    regressor: JointRegressor
        Mesh to joint map
    samples: dict[str, list[Sample]]
        Samples of every split
    """

    manifest: DatasetManifest
    template: TriMesh
    regressor: JointRegressor
    samples: dict[str, list[Sample]]

    def split(self, name: str) -> list[Sample]:
        """
        Samples of one split

        Parameters
        ----------
        name: str
            One of "train", "val", "test" and "occluded_test"

        Returns
        -------
        list[Sample]
            The samples, in manifest order
        """
        if name not in SPLITS:
            raise DatasetError("unknown split " + name)
        return self.samples.get(name, [])


def load_dataset(file_name: str) -> Dataset:
    """
    Read a dataset with all its samples

    Parameters
    ----------
    file_name: str
        Path of the manifest or of the dataset directory

    Returns
    -------
    Dataset
        The dataset
    """
    manifest = load_manifest(file_name)
    template = load_obj(manifest.path(manifest.template_path))
    regressor = load_regressor(manifest.path(manifest.regressor_path))
    samples = {
        split: [load_sample(manifest.path(p)) for p in paths]
        for split, paths in manifest.sample_paths.items()
    }
    logger.info(
        "loaded dataset %s with %s",
        manifest.directory,
        ", ".join(split + "=" + str(len(s)) for split, s in samples.items()),
    )
    return Dataset(manifest, template, regressor, samples)


def _split_sizes(count: int) -> dict[str, int]:
    held_out = max(1, int(round(0.15 * count)))
    train = count - 2 * held_out
    if train < 1:
        raise DatasetError(
            "a dataset needs at least 3 samples to fill every split, got " + str(count)
        )
    return {"train": train, "val": held_out, "test": held_out}


def _deformation(
    unit: NDArray[float], scale: float, rng: numpy.random.Generator, terms: int = 6
) -> NDArray[float]:
    """Sum of sinusoids of the normalized template coordinates"""
    displacement = numpy.zeros_like(unit)
    for _ in range(terms):
        direction = rng.normal(size=3)
        direction /= numpy.linalg.norm(direction)
        frequency = rng.uniform(1.0, 3.0)
        phase = rng.uniform(0.0, 2.0 * numpy.pi)
        amplitude = rng.uniform(-1.0, 1.0, size=3) * scale / terms
        displacement += numpy.sin(frequency * unit @ direction + phase)[:, None] * amplitude
    return displacement


def make_sample(
    sample_id: str,
    template: TriMesh,
    regressor: JointRegressor,
    projection: NDArray[float],
    rng: numpy.random.Generator,
    deform_scale: float,
    noise_scale: float,
) -> Sample:
    """
    Draw one synthetic sample

    Parameters
    ----------
    sample_id: str
        Identifier
    template: TriMesh
        Template mesh in millimetres
    regressor: JointRegressor
        Mesh to joint map
    projection: NDArray[float]
        (3, k_feat) random projection shared by the dataset
    rng: numpy.random.Generator
        Source of randomness
    deform_scale: float
        Deformation amplitude relative to the template diagonal
    noise_scale: float
        Input noise standard deviation relative to the template diagonal

    Returns
    -------
    Sample
        A consistent sample
    """
    diagonal = template.bounding_box_diagonal
    center = template.vertices.mean(axis=0)
    unit = (template.vertices - center) / diagonal
    deformed = template.vertices + diagonal * _deformation(unit, deform_scale, rng)

    rotation = scipy.spatial.transform.Rotation.from_euler(
        "yxz",
        [rng.uniform(-numpy.pi, numpy.pi), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)],
    )
    translation = rng.uniform(-100.0, 100.0, size=3)
    gt_mesh = rotation.apply(deformed - center) + center + translation

    joints3d = regressor.regress_array(gt_mesh)
    camera = Camera(
        float(rng.uniform(0.8, 1.2)), tuple(rng.uniform(-50.0, 50.0, size=2))
    )
    joints2d = camera.project_array(joints3d)

    noisy = gt_mesh + rng.normal(scale=noise_scale * diagonal, size=gt_mesh.shape)
    features = numpy.tanh(((noisy - noisy.mean(axis=0)) / diagonal) @ projection)
    return Sample(
        id=sample_id,
        input_features=numpy.hstack([noisy, features]),
        gt_mesh=gt_mesh,
        gt_joints3d=joints3d,
        gt_joints2d=joints2d,
        camera=camera,
    )


def generate_dataset(
    template: TriMesh,
    count: int,
    seed: int,
    deform_scale: float,
    directory: str,
    noise_scale: float = 0.05,
    k_feat: int = 16,
    hierarchy_path: Optional[str] = None,
) -> DatasetManifest:
    """
    Generate and write a synthetic dataset

    Parameters
    ----------
    template: TriMesh
        Template mesh in millimetres
    count: int
        Number of samples, split 70/15/15 into train, val and test
    seed: int
        Generator seed
    deform_scale: float
        Deformation amplitude relative to the template diagonal
    directory: str
        Output directory, created if needed
    noise_scale: float, default=0.05
        Input noise relative to the template diagonal
    k_feat: int, default=16
        Projection features per vertex
    hierarchy_path: str, optional
        Hierarchy manifest whose level 0 must match the template

    Returns
    -------
    DatasetManifest
        The written manifest
    """
    if deform_scale < 0.0 or noise_scale < 0.0:
        raise DatasetError("deform_scale and noise_scale must be non-negative")
    if k_feat < 0:
        raise DatasetError("k_feat must be non-negative, got " + str(k_feat))
    if hierarchy_path is not None:
        nodes = load_hierarchy(hierarchy_path).node_counts[0]
        if nodes != template.number_of_vertices:
            raise DatasetError(
                "template has "
                + str(template.number_of_vertices)
                + " vertices but the hierarchy's finest level has "
                + str(nodes)
            )
    sizes = _split_sizes(count)

    os.makedirs(os.path.join(directory, "samples"), exist_ok=True)
    save_obj(template, os.path.join(directory, "template.obj"), precision=12)
    template = load_obj(os.path.join(directory, "template.obj"))
    regressor = landmark_regressor(template)
    save_regressor(regressor, os.path.join(directory, "regressor.txt"))

    rng = numpy.random.default_rng(seed)
    projection = rng.normal(scale=3.0, size=(3, k_feat))
    sample_paths: dict[str, list[str]] = {split: [] for split in SPLITS}
    index = 0
    for split in ("train", "val", "test"):
        for _ in range(sizes[split]):
            sample_id = "sample_" + str(index).zfill(5)
            sample = make_sample(
                sample_id, template, regressor, projection, rng, deform_scale, noise_scale
            )
            relative = os.path.join("samples", sample_id + ".txt")
            save_sample(sample, os.path.join(directory, relative))
            sample_paths[split].append(relative)
            index += 1

    manifest = DatasetManifest(
        directory=os.path.abspath(directory),
        template_path="template.obj",
        hierarchy_path=(
            os.path.relpath(os.path.abspath(hierarchy_path), os.path.abspath(directory))
            if hierarchy_path is not None
            else None
        ),
        regressor_path="regressor.txt",
        sample_paths=sample_paths,
        generator_seed=seed,
        deform_scale=deform_scale,
        noise_scale=noise_scale,
        k_feat=k_feat,
    )
    manifest.save()
    logger.info("generated %d samples in %s", count, directory)
    return manifest


def generate_occluded_split(
    manifest: DatasetManifest, mask_fraction: float, seed: int = 0
) -> DatasetManifest:
    """
    Add copies of the test samples with contiguous patches of input rows zeroed

    Ground truth is left untouched. The manifest file is rewritten.

    Parameters
    ----------
    manifest: DatasetManifest
        A generated dataset
    mask_fraction: float
        Fraction of vertices hidden per sample, strictly between 0 and 1
    seed: int, default=0
        Seed of the patch locations

    Returns
    -------
    DatasetManifest
        The manifest including the "occluded_test" split
    """
    if not 0.0 < mask_fraction < 1.0:
        raise DatasetError(
            "mask_fraction must lie strictly between 0 and 1, got " + str(mask_fraction)
        )
    template = load_obj(manifest.path(manifest.template_path))
    neighbors = template.neighbors()
    n = template.number_of_vertices
    masking = MaskSpec(int(round(mask_fraction * n)), seed, "contiguous_patch")

    occluded = []
    for index, relative in enumerate(manifest.sample_paths["test"]):
        sample = load_sample(manifest.path(relative))
        features = sample.input_features.copy()
        features[masked_rows(masking, n, neighbors, draw=(index,))] = 0.0
        copy = dataclasses.replace(sample, id=sample.id + "_occ", input_features=features)
        path = os.path.join("samples", copy.id + ".txt")
        save_sample(copy, manifest.path(path))
        occluded.append(path)

    sample_paths = dict(manifest.sample_paths)
    sample_paths["occluded_test"] = occluded
    updated = dataclasses.replace(
        manifest, sample_paths=sample_paths, occlusion_fraction=mask_fraction
    )
    updated.save()
    logger.info(
        "wrote %d occluded test samples hiding %d of %d rows",
        len(occluded),
        masking.c,
        n,
    )
    return updated
