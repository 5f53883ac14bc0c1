"""Multi-resolution mesh hierarchies and the sampling operators between levels.

Coarse meshes are produced by quadric-error edge collapse where every collapse
keeps one of the two endpoints, so a coarse mesh is always a subset of the fine
vertices. The down operator is therefore a 0/1 selection matrix and the up
operator expresses each fine vertex through the coarse triangle nearest to it.

Examples
--------
>>> import dcgnet
>>> hierarchy = dcgnet.build_hierarchy(dcgnet.icosphere(2), levels=2, factor=4)
>>> hierarchy.node_counts
[162, 41, 11]
"""

import dataclasses
import heapq
import logging
import math
import os

import numpy
import scipy.sparse
from numpy.typing import NDArray

from dcgnet.errors import DecimationError, MeshError
from dcgnet.mesh import (
    NormalizedAdjacency,
    SparseMatrix,
    TriMesh,
    build_adjacency,
    load_obj,
    save_obj,
)

logger = logging.getLogger(__name__)

MANIFEST_HEADER = "dcgnet-hierarchy v1"


@dataclasses.dataclass(frozen=True, eq=False)
class SamplingOperator:
    """Linear maps between two neighboring hierarchy levels

    Attributes
    ----------
    down: SparseMatrix
        (Ñ, N) selection matrix with a single 1 per row
    up: SparseMatrix
        (N, Ñ) barycentric interpolation, at most three non-negative weights per row
        summing to one
    source_level: int
        The finer level
    target_level: int
        The coarser level
    """

    down: SparseMatrix
    up: SparseMatrix
    source_level: int
    target_level: int

    @property
    def selected(self) -> NDArray[int]:
        """NDArray[int]: Fine vertex index kept for every coarse vertex"""
        return self.down.tocsr().indices.copy()


@dataclasses.dataclass(frozen=True, eq=False)
class MeshHierarchy:
    """A sequence of progressively coarser meshes

    Attributes
    ----------
    levels: list[TriMesh]
        L + 1 meshes, level 0 is the finest
    adjacencies: list[NormalizedAdjacency]
        Self-looped, symmetrically normalized adjacency of every level
    samplers: list[SamplingOperator]
        L operators, `samplers[l]` ties level l to level l + 1
    """

    levels: list[TriMesh]
    adjacencies: list[NormalizedAdjacency]
    samplers: list[SamplingOperator]

    @property
    def number_of_levels(self) -> int:
        """int: Number of coarsening steps L"""
        return len(self.samplers)

    @property
    def node_counts(self) -> list[int]:
        """list[int]: Number of nodes of every level, finest first"""
        return [level.number_of_vertices for level in self.levels]

    def resample(self, source: int, target: int) -> SparseMatrix:
        """
        Compose sampling operators to move node signals between two levels

        Parameters
        ----------
        source: int
            Level the signal lives on
        target: int
            Level the signal is moved to

        Returns
        -------
        SparseMatrix
            (N_target, N_source) operator; up operators are chained when moving to a
            finer level and down operators when moving to a coarser one
        """
        operator = scipy.sparse.identity(self.node_counts[source], format="csr")
        if source > target:
            for level in range(source - 1, target - 1, -1):
                operator = self.samplers[level].up @ operator
        else:
            for level in range(source, target):
                operator = self.samplers[level].down @ operator
        return operator.tocsr()


def _face_quadrics(vertices: NDArray[float], faces: NDArray[int]) -> NDArray[float]:
    normals = numpy.cross(
        vertices[faces[:, 1]] - vertices[faces[:, 0]],
        vertices[faces[:, 2]] - vertices[faces[:, 0]],
    )
    lengths = numpy.linalg.norm(normals, axis=1)
    lengths[lengths == 0.0] = numpy.inf
    normals = normals / lengths[:, None]
    planes = numpy.column_stack(
        [normals, -numpy.sum(normals * vertices[faces[:, 0]], axis=1)]
    )

    quadrics = numpy.zeros([len(vertices), 4, 4])
    fundamental = planes[:, :, None] * planes[:, None, :]
    for corner in range(3):
        numpy.add.at(quadrics, faces[:, corner], fundamental)
    return quadrics


class _CollapseState(object):
    """Mutable half of an edge-collapse run"""

    def __init__(self, mesh: TriMesh):
        self.vertices = mesh.vertices
        self.faces: list[list[int]] = [list(map(int, face)) for face in mesh.faces]
        self.face_alive: list[bool] = [True] * len(self.faces)
        self.alive = numpy.ones(mesh.number_of_vertices, dtype=bool)
        self.version = numpy.zeros(mesh.number_of_vertices, dtype=numpy.int64)
        self.quadrics = _face_quadrics(mesh.vertices, mesh.faces)
        self.vertex_faces: list[set[int]] = [
            set() for _ in range(mesh.number_of_vertices)
        ]
        for idx, face in enumerate(self.faces):
            for v in face:
                self.vertex_faces[v].add(idx)

    def neighbors(self, v: int) -> set[int]:
        ring = set()
        for f in self.vertex_faces[v]:
            ring.update(self.faces[f])
        ring.discard(v)
        return ring

    def is_boundary(self, v: int) -> bool:
        for n in self.neighbors(v):
            if len(self.vertex_faces[v] & self.vertex_faces[n]) == 1:
                return True
        return False

    def candidate(self, a: int, b: int) -> tuple:
        a, b = min(a, b), max(a, b)
        q = self.quadrics[a] + self.quadrics[b]
        ha = numpy.append(self.vertices[a], 1.0)
        hb = numpy.append(self.vertices[b], 1.0)
        cost_a = float(ha @ q @ ha)
        cost_b = float(hb @ q @ hb)
        keep = a if cost_a <= cost_b else b
        return (
            min(cost_a, cost_b),
            a,
            b,
            keep,
            int(self.version[a]),
            int(self.version[b]),
        )

    def is_current(self, entry: tuple) -> bool:
        _, a, b, _, va, vb = entry
        return (
            self.alive[a]
            and self.alive[b]
            and self.version[a] == va
            and self.version[b] == vb
            and b in self.neighbors(a)
        )

    def link_condition(self, a: int, b: int) -> bool:
        shared = self.vertex_faces[a] & self.vertex_faces[b]
        common = self.neighbors(a) & self.neighbors(b)
        opposite = set()
        for f in shared:
            opposite.update(self.faces[f])
        opposite -= {a, b}
        if common != opposite or len(shared) not in (1, 2):
            return False
        if len(shared) == 2 and self.is_boundary(a) and self.is_boundary(b):
            return False
        return True

    def flips(self, keep: int, remove: int) -> bool:
        for f in self.vertex_faces[remove]:
            face = self.faces[f]
            if keep in face:
                continue
            before = self.vertices[face]
            after = before.copy()
            after[face.index(remove)] = self.vertices[keep]
            n_before = numpy.cross(before[1] - before[0], before[2] - before[0])
            n_after = numpy.cross(after[1] - after[0], after[2] - after[0])
            if float(n_before @ n_after) <= 0.0:
                return True
        return False

    def collapse(self, keep: int, remove: int) -> None:
        for f in list(self.vertex_faces[remove]):
            face = self.faces[f]
            if keep in face:
                self.face_alive[f] = False
                for v in face:
                    self.vertex_faces[v].discard(f)
            else:
                face[face.index(remove)] = keep
                self.vertex_faces[keep].add(f)
        self.vertex_faces[remove] = set()
        self.alive[remove] = False
        self.quadrics[keep] = self.quadrics[keep] + self.quadrics[remove]
        self.version[keep] += 1


def _barycentric_projection(
    points: NDArray[float], coarse: TriMesh
) -> tuple[NDArray[int], NDArray[float]]:
    """Nearest coarse triangle of every point and clamped barycentric weights"""
    a = coarse.vertices[coarse.faces[:, 0]]
    b = coarse.vertices[coarse.faces[:, 1]]
    c = coarse.vertices[coarse.faces[:, 2]]
    ab, ac = b - a, c - a
    normal = numpy.cross(ab, ac)
    normal_length = numpy.linalg.norm(normal, axis=1)
    d00 = numpy.sum(ab * ab, axis=1)
    d01 = numpy.sum(ab * ac, axis=1)
    d11 = numpy.sum(ac * ac, axis=1)
    denominator = d00 * d11 - d01 * d01
    degenerate = denominator <= 1e-300
    denominator[degenerate] = 1.0

    def segment_distance(p, start, end):
        direction = end - start
        length = numpy.sum(direction * direction, axis=1)
        length[length == 0.0] = 1.0
        t = numpy.clip(numpy.sum((p - start) * direction, axis=1) / length, 0.0, 1.0)
        return numpy.linalg.norm(p - (start + t[:, None] * direction), axis=1)

    nearest = numpy.zeros(len(points), dtype=numpy.int64)
    weights = numpy.zeros([len(points), 3])
    for idx, p in enumerate(points):
        ap = p - a
        d20 = numpy.sum(ap * ab, axis=1)
        d21 = numpy.sum(ap * ac, axis=1)
        v = (d11 * d20 - d01 * d21) / denominator
        w = (d00 * d21 - d01 * d20) / denominator
        u = 1.0 - v - w
        inside = (u >= 0.0) & (v >= 0.0) & (w >= 0.0) & ~degenerate

        distance = numpy.minimum(
            numpy.minimum(segment_distance(p, a, b), segment_distance(p, b, c)),
            segment_distance(p, c, a),
        )
        plane_distance = numpy.abs(numpy.sum(ap * normal, axis=1)) / numpy.where(
            normal_length > 0.0, normal_length, 1.0
        )
        distance = numpy.where(inside, plane_distance, distance)

        best = int(numpy.argmin(distance))
        bary = numpy.clip(numpy.array([u[best], v[best], w[best]]), 0.0, 1.0)
        if degenerate[best] or bary.sum() == 0.0:
            corners = coarse.vertices[coarse.faces[best]]
            bary = numpy.zeros(3)
            bary[int(numpy.argmin(numpy.linalg.norm(corners - p, axis=1)))] = 1.0
        nearest[idx] = best
        weights[idx] = bary / bary.sum()
    return nearest, weights


def _sampling_operator(
    fine: TriMesh, coarse: TriMesh, selected: NDArray[int], level: int
) -> SamplingOperator:
    n_fine, n_coarse = fine.number_of_vertices, coarse.number_of_vertices
    down = scipy.sparse.csr_matrix(
        (numpy.ones(n_coarse), (numpy.arange(n_coarse), selected)),
        shape=(n_coarse, n_fine),
    )

    position = -numpy.ones(n_fine, dtype=numpy.int64)
    position[selected] = numpy.arange(n_coarse)
    removed = numpy.flatnonzero(position < 0)

    rows = [selected]
    cols = [numpy.arange(n_coarse)]
    values = [numpy.ones(n_coarse)]
    if len(removed) and coarse.number_of_faces:
        nearest, weights = _barycentric_projection(fine.vertices[removed], coarse)
        corners = coarse.faces[nearest]
        keep = weights > 0.0
        rows.append(numpy.repeat(removed, 3).reshape(-1, 3)[keep])
        cols.append(corners[keep])
        values.append(weights[keep])
    elif len(removed):
        distance = numpy.linalg.norm(
            fine.vertices[removed][:, None, :] - coarse.vertices[None, :, :], axis=2
        )
        rows.append(removed)
        cols.append(numpy.argmin(distance, axis=1))
        values.append(numpy.ones(len(removed)))

    up = scipy.sparse.csr_matrix(
        (numpy.concatenate(values), (numpy.concatenate(rows), numpy.concatenate(cols))),
        shape=(n_fine, n_coarse),
    )
    return SamplingOperator(down, up, level, level + 1)


def decimate(
    mesh: TriMesh, target_count: int, level: int = 0
) -> tuple[TriMesh, SamplingOperator]:
    """
    Simplify a mesh by quadric-error edge collapse onto existing vertices

    Edges are collapsed cheapest first, ties broken by the (smaller, larger) vertex
    index pair, so the result depends only on the input mesh. An edge is only
    collapsed when it satisfies the link condition; collapses that flip a
    neighboring triangle are postponed and only used when nothing else is possible.

    Parameters
    ----------
    mesh: TriMesh
        The mesh to simplify
    target_count: int
        Number of vertices to keep, at least 4 and fewer than the mesh has
    level: int, default=0
        Level index recorded on the returned operator

    Returns
    -------
    tuple[TriMesh, SamplingOperator]
        The coarse mesh, whose vertices keep their fine order, and the operator
        tying it to the input
    """
    n = mesh.number_of_vertices
    if target_count < 4:
        raise DecimationError(
            "target count " + str(target_count) + " is below the minimum of 4"
        )
    if target_count >= n:
        raise DecimationError(
            "target count "
            + str(target_count)
            + " must be below the vertex count "
            + str(n)
        )

    state = _CollapseState(mesh)
    heap = [state.candidate(int(i), int(j)) for i, j in mesh.edges]
    heapq.heapify(heap)
    deferred: list[tuple] = []
    allow_flips = False
    remaining = n

    while remaining > target_count:
        if not heap:
            if deferred and not allow_flips:
                logger.warning(
                    "no flip-free collapse left at %d vertices, allowing flips",
                    remaining,
                )
                allow_flips = True
                heap = deferred
                heapq.heapify(heap)
                deferred = []
                continue
            blocked = min(deferred) if deferred else None
            raise DecimationError(
                "cannot collapse below "
                + str(remaining)
                + " vertices"
                + (
                    ", edge (" + str(blocked[1]) + ", " + str(blocked[2]) + ") is blocked"
                    if blocked
                    else ""
                )
            )

        entry = heapq.heappop(heap)
        if not state.is_current(entry):
            continue
        _, a, b, keep, _, _ = entry
        remove = b if keep == a else a
        if not state.link_condition(a, b) or (
            not allow_flips and state.flips(keep, remove)
        ):
            deferred.append(entry)
            continue

        state.collapse(keep, remove)
        remaining -= 1
        logger.debug("collapsed vertex %d onto %d", remove, keep)

        for entry in deferred:
            heapq.heappush(heap, entry)
        deferred = []
        allow_flips = False
        for neighbor in state.neighbors(keep):
            heapq.heappush(heap, state.candidate(keep, neighbor))

    selected = numpy.flatnonzero(state.alive)
    position = -numpy.ones(n, dtype=numpy.int64)
    position[selected] = numpy.arange(len(selected))
    faces = [
        position[face]
        for face, alive in zip(state.faces, state.face_alive)
        if alive
    ]
    coarse = TriMesh(
        mesh.vertices[selected], numpy.array(faces, dtype=numpy.int64).reshape(-1, 3)
    )
    return coarse, _sampling_operator(mesh, coarse, selected, level)


def select_points(
    mesh: TriMesh, count: int, level: int = 0
) -> tuple[TriMesh, SamplingOperator]:
    """
    Reduce a tiny mesh to a handful of its vertices

    The vertex nearest the centroid is taken first and farthest-point order adds the
    rest. Three selected points keep a single triangle; fewer keep no faces.

    Parameters
    ----------
    mesh: TriMesh
        The mesh to reduce
    count: int
        Number of vertices to keep, between 1 and 3 and fewer than the mesh has
    level: int, default=0
        Level index recorded on the returned operator

    Returns
    -------
    tuple[TriMesh, SamplingOperator]
        The reduced level and the operator tying it to the input
    """
    if not 1 <= count <= 3 or count >= mesh.number_of_vertices:
        raise DecimationError(
            "cannot select "
            + str(count)
            + " points from a mesh with "
            + str(mesh.number_of_vertices)
            + " vertices"
        )
    centroid = mesh.vertices.mean(axis=0)
    chosen = [int(numpy.argmin(numpy.linalg.norm(mesh.vertices - centroid, axis=1)))]
    while len(chosen) < count:
        distance = numpy.min(
            numpy.linalg.norm(
                mesh.vertices[:, None, :] - mesh.vertices[chosen][None, :, :], axis=2
            ),
            axis=1,
        )
        distance[chosen] = -1.0
        chosen.append(int(numpy.argmax(distance)))

    selected = numpy.array(sorted(chosen), dtype=numpy.int64)
    faces = [[0, 1, 2]] if count == 3 else []
    coarse = TriMesh(mesh.vertices[selected], numpy.array(faces).reshape(-1, 3))
    return coarse, _sampling_operator(mesh, coarse, selected, level)


def build_hierarchy(mesh: TriMesh, levels: int, factor: int) -> MeshHierarchy:
    """
    Build a mesh hierarchy by repeatedly reducing the node count by a factor

    Each step aims for ceil(N / factor) nodes. Quadric decimation is used while the
    aim is at least 4 nodes; larger meshes aiming lower stop at 4, and meshes of at
    most 4 nodes are reduced by point selection, so a factor-4 hierarchy of 432
    nodes reads 432, 108, 27, 7, 4, 1.

    Parameters
    ----------
    mesh: TriMesh
        The finest level
    levels: int
        Number of coarsening steps L, at least 1
    factor: int
        Reduction factor per step, at least 2

    Returns
    -------
    MeshHierarchy
        L + 1 levels with their adjacencies and L sampling operators
    """
    if levels < 1:
        raise MeshError("a hierarchy needs at least one level, got " + str(levels))
    if factor < 2:
        raise MeshError("the reduction factor must be at least 2, got " + str(factor))

    meshes = [mesh]
    samplers = []
    for level in range(levels):
        current = meshes[-1]
        n = current.number_of_vertices
        if n == 1:
            raise DecimationError(
                "level " + str(level) + " has a single node and cannot be coarsened"
            )
        target = math.ceil(n / factor)
        if target >= 4:
            coarse, sampler = decimate(current, target, level)
        elif n > 4:
            coarse, sampler = decimate(current, 4, level)
        else:
            coarse, sampler = select_points(current, target, level)
        logger.info(
            "level %d: %d -> %d nodes", level, n, coarse.number_of_vertices
        )
        meshes.append(coarse)
        samplers.append(sampler)

    adjacencies = [build_adjacency(m, True, True) for m in meshes]
    return MeshHierarchy(meshes, adjacencies, samplers)


def _write_triplets(f, matrix: SparseMatrix) -> None:
    coo = matrix.tocoo()
    for row, col, value in sorted(zip(coo.row, coo.col, coo.data)):
        f.write(str(int(row)) + " " + str(int(col)) + " " + repr(float(value)) + "\n")


def save_hierarchy(hierarchy: MeshHierarchy, file_name: str) -> None:
    """
    Write a hierarchy manifest and one OBJ file per level next to it

    Parameters
    ----------
    hierarchy: MeshHierarchy
        The hierarchy to write
    file_name: str
        Path of the manifest; level meshes are written as `<stem>_level_<i>.obj`
        in the same directory

    Returns
    -------
    None
    """
    directory = os.path.dirname(os.path.abspath(file_name))
    stem = os.path.splitext(os.path.basename(file_name))[0]

    with open(file_name, "w") as f:
        f.write(MANIFEST_HEADER + "\n")
        for idx, level in enumerate(hierarchy.levels):
            obj_name = stem + "_level_" + str(idx) + ".obj"
            save_obj(level, os.path.join(directory, obj_name), precision=12)
            f.write(
                "level "
                + str(idx)
                + " nodes "
                + str(level.number_of_vertices)
                + " obj "
                + obj_name
                + "\n"
            )
        for sampler in hierarchy.samplers:
            f.write("down " + str(sampler.source_level) + "\n")
            _write_triplets(f, sampler.down)
            f.write("up " + str(sampler.source_level) + "\n")
            _write_triplets(f, sampler.up)
        f.write("end\n")


def load_hierarchy(file_name: str) -> MeshHierarchy:
    """
    Read a hierarchy manifest written by :func:`save_hierarchy`

    Parameters
    ----------
    file_name: str
        Path of the manifest

    Returns
    -------
    MeshHierarchy
        The hierarchy, with adjacencies rebuilt from the level meshes
    """
    directory = os.path.dirname(os.path.abspath(file_name))
    meshes: list[TriMesh] = []
    blocks: dict[tuple[str, int], list[tuple[int, int, float]]] = {}
    current = None
    finished = False

    with open(file_name, "r") as f:
        header = f.readline().strip()
        if header != MANIFEST_HEADER:
            raise MeshError(file_name + ": not a hierarchy manifest")
        for line in f:
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "level":
                level = load_obj(os.path.join(directory, tokens[5]), False)
                if level.number_of_vertices != int(tokens[3]):
                    raise MeshError(
                        file_name
                        + ": level "
                        + tokens[1]
                        + " declares "
                        + tokens[3]
                        + " nodes but its OBJ has "
                        + str(level.number_of_vertices)
                    )
                meshes.append(level)
            elif tokens[0] in ("down", "up"):
                current = (tokens[0], int(tokens[1]))
                blocks[current] = []
            elif tokens[0] == "end":
                finished = True
                break
            elif current is not None:
                blocks[current].append((int(tokens[0]), int(tokens[1]), float(tokens[2])))
            else:
                raise MeshError(file_name + ": unexpected record '" + tokens[0] + "'")

    if not finished:
        raise MeshError(file_name + ": manifest is truncated, missing 'end'")

    def assemble(kind: str, level: int, shape: tuple[int, int]) -> SparseMatrix:
        triplets = blocks.get((kind, level))
        if triplets is None:
            raise MeshError(file_name + ": missing block " + kind + " " + str(level))
        rows, cols, values = zip(*triplets) if triplets else ((), (), ())
        return scipy.sparse.csr_matrix((values, (rows, cols)), shape=shape)

    counts = [m.number_of_vertices for m in meshes]
    samplers = [
        SamplingOperator(
            assemble("down", level, (counts[level + 1], counts[level])),
            assemble("up", level, (counts[level], counts[level + 1])),
            level,
            level + 1,
        )
        for level in range(len(meshes) - 1)
    ]
    adjacencies = [build_adjacency(m, True, True) for m in meshes]
    return MeshHierarchy(meshes, adjacencies, samplers)
