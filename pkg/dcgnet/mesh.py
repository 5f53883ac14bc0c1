"""Triangle meshes, Wavefront OBJ input/output and graph adjacency construction.

Examples
--------
The icosahedron is the smallest mesh on which every vertex has the same degree
>>> import dcgnet
>>> ico = dcgnet.icosahedron()
>>> ico.number_of_vertices, ico.number_of_faces
(12, 20)
>>> adjacency = dcgnet.build_adjacency(ico, add_self_loops=True, normalize=True)
>>> adjacency.matrix.shape
(12, 12)
>>> float(adjacency.matrix[0, 0])
0.16666666666666666
"""

import dataclasses
import logging
from typing import Literal

import numpy
import scipy.sparse
import scipy.sparse.csgraph
from numpy.typing import NDArray

from dcgnet.errors import (
    DisconnectedMeshError,
    FaceIndexError,
    MeshError,
    NonTriangleFaceError,
    ObjParseError,
)

logger = logging.getLogger(__name__)

SparseMatrix = scipy.sparse.csr_matrix
"""Type: Carrier for adjacency, sampling and regressor matrices"""

Normalization = Literal["symmetric", "row"]
"""Type: Supported adjacency normalizations"""


@dataclasses.dataclass(frozen=True, eq=False)
class TriMesh:
    """An immutable triangle mesh

    Attributes
    ----------
    vertices: NDArray[float]
        Vertex positions, shape (N, 3)
    faces: NDArray[int]
        Vertex index triples, shape (F, 3), zero based
    metadata: dict
        Free-form information about where the mesh came from, e.g. the number of
        OBJ records that were ignored while loading it
    """

    vertices: NDArray[float]
    faces: NDArray[int]
    metadata: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        vertices = numpy.array(self.vertices, dtype=numpy.float64).reshape(-1, 3)
        faces = numpy.array(self.faces, dtype=numpy.int64).reshape(-1, 3)

        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            bad = int(faces[(faces < 0) | (faces >= len(vertices))][0])
            raise FaceIndexError(
                "face references vertex "
                + str(bad)
                + " but the mesh has "
                + str(len(vertices))
                + " vertices"
            )
        repeated = (
            (faces[:, 0] == faces[:, 1])
            | (faces[:, 1] == faces[:, 2])
            | (faces[:, 0] == faces[:, 2])
        )
        if repeated.any():
            raise MeshError(
                "face " + str(int(numpy.argmax(repeated))) + " repeats a vertex index"
            )

        vertices.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @property
    def number_of_vertices(self) -> int:
        """int: Number of vertices in the mesh"""
        return len(self.vertices)

    @property
    def number_of_faces(self) -> int:
        """int: Number of triangles in the mesh"""
        return len(self.faces)

    @property
    def edges(self) -> NDArray[int]:
        """NDArray[int]: Unique undirected edges as sorted (i, j) pairs with i < j, shape (E, 2)"""
        if not self.number_of_faces:
            return numpy.zeros([0, 2], dtype=numpy.int64)
        pairs = numpy.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        pairs.sort(axis=1)
        return numpy.unique(pairs, axis=0)

    @property
    def bounding_box_diagonal(self) -> float:
        """float: Length of the diagonal of the axis-aligned bounding box"""
        return float(
            numpy.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0))
        )

    def neighbors(self) -> list[list[int]]:
        """
        Sorted edge neighbors of every vertex

        Returns
        -------
        list[list[int]]
            Entry i lists the vertices sharing an edge with vertex i
        """
        adjacent: list[set[int]] = [set() for _ in range(self.number_of_vertices)]
        for i, j in self.edges:
            adjacent[i].add(int(j))
            adjacent[j].add(int(i))
        return [sorted(a) for a in adjacent]

    def is_connected(self) -> bool:
        """
        Check whether the edge graph has a single connected component

        Returns
        -------
        bool
            True if every vertex can be reached from every other vertex
        """
        if self.number_of_vertices <= 1:
            return True
        n_components, _ = scipy.sparse.csgraph.connected_components(
            build_adjacency(self, add_self_loops=False, normalize=False).matrix,
            directed=False,
        )
        return n_components == 1

    def with_vertices(self, vertices: NDArray[float]) -> "TriMesh":
        """
        A copy of this mesh with the same faces and new vertex positions

        Parameters
        ----------
        vertices: NDArray[float]
            New vertex positions, shape (N, 3)

        Returns
        -------
        TriMesh
            The repositioned mesh
        """
        vertices = numpy.asarray(vertices, dtype=numpy.float64)
        if vertices.shape != self.vertices.shape:
            raise MeshError(
                "expected vertices of shape "
                + str(self.vertices.shape)
                + ", got "
                + str(vertices.shape)
            )
        return TriMesh(vertices, self.faces)


@dataclasses.dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """A graph adjacency matrix derived from mesh connectivity

    Attributes
    ----------
    matrix: SparseMatrix
        The (N, N) adjacency, structurally symmetric and non-negative
    self_loops: bool
        Whether the identity was added before normalizing
    normalization: str
        One of "symmetric", "row" or "none"
    """

    matrix: SparseMatrix
    self_loops: bool
    normalization: str

    @property
    def size(self) -> int:
        """int: Number of graph nodes"""
        return self.matrix.shape[0]

    def dense(self) -> NDArray[float]:
        """
        The adjacency as a dense array

        Returns
        -------
        NDArray[float]
            A new (N, N) array
        """
        return self.matrix.toarray()

    def structure(self, include_self: bool = True) -> NDArray[bool]:
        """
        Boolean neighborhood mask

        Parameters
        ----------
        include_self: bool, default=True
            Whether every node counts as its own neighbor

        Returns
        -------
        NDArray[bool]
            (N, N) mask that is True where an entry is stored
        """
        mask = self.matrix.toarray() != 0
        if include_self:
            numpy.fill_diagonal(mask, True)
        return mask


def build_adjacency(
    mesh: TriMesh,
    add_self_loops: bool = True,
    normalize: bool = True,
    normalization: Normalization = "symmetric",
) -> NormalizedAdjacency:
    """
    Build the graph adjacency of a mesh from its edges

    Parameters
    ----------
    mesh: TriMesh
        The mesh whose faces define the edges
    add_self_loops: bool, default=True
        Add the identity before normalizing
    normalize: bool, default=True
        If False the matrix is binary
    normalization: "symmetric" or "row", default="symmetric"
        Symmetric normalization stores 1/sqrt(d_i d_j) at (i, j); row normalization
        stores 1/d_i. Degrees include the self loop when one is added.

    Returns
    -------
    NormalizedAdjacency
        The adjacency matrix
    """
    n = mesh.number_of_vertices
    edges = mesh.edges
    rows = numpy.concatenate([edges[:, 0], edges[:, 1]])
    cols = numpy.concatenate([edges[:, 1], edges[:, 0]])
    if add_self_loops:
        rows = numpy.concatenate([rows, numpy.arange(n)])
        cols = numpy.concatenate([cols, numpy.arange(n)])

    order = numpy.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    degree = numpy.bincount(rows, minlength=n).astype(numpy.float64)

    if not normalize:
        values = numpy.ones(len(rows))
        kind = "none"
    elif normalization == "symmetric":
        values = 1.0 / numpy.sqrt(degree[rows] * degree[cols])
        kind = "symmetric"
    elif normalization == "row":
        values = 1.0 / degree[rows]
        kind = "row"
    else:
        raise ValueError("unknown normalization '" + str(normalization) + "'")

    matrix = scipy.sparse.csr_matrix((values, (rows, cols)), shape=(n, n))
    return NormalizedAdjacency(matrix, add_self_loops, kind)


def load_obj(file_name: str, require_connected: bool = True) -> TriMesh:
    """
    Read a triangle mesh from a Wavefront OBJ file

    Only `v` and `f` records are used. Comments are skipped and every other record
    type is ignored and counted in ``mesh.metadata["ignored_records"]``.

    Parameters
    ----------
    file_name: str
        Path of the OBJ file
    require_connected: bool, default=True
        Reject meshes whose edge graph is disconnected

    Returns
    -------
    TriMesh
        The mesh, with vertex order preserved from the file
    """
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    ignored = 0

    with open(file_name, "r") as f:
        for line_number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if tokens[0] == "v":
                try:
                    vertices.append([float(x) for x in tokens[1:4]])
                except ValueError:
                    raise ObjParseError(
                        file_name + ":" + str(line_number) + ": malformed vertex record"
                    )
                if len(vertices[-1]) != 3:
                    raise ObjParseError(
                        file_name
                        + ":"
                        + str(line_number)
                        + ": vertex record needs three coordinates"
                    )
            elif tokens[0] == "f":
                if len(tokens) != 4:
                    raise NonTriangleFaceError(
                        file_name
                        + ":"
                        + str(line_number)
                        + ": face has "
                        + str(len(tokens) - 1)
                        + " vertices, only triangles are supported"
                    )
                try:
                    face = [int(token.split("/")[0]) for token in tokens[1:]]
                except ValueError:
                    raise ObjParseError(
                        file_name + ":" + str(line_number) + ": malformed face record"
                    )
                for index in face:
                    if index < 1:
                        raise FaceIndexError(
                            file_name
                            + ":"
                            + str(line_number)
                            + ": face index "
                            + str(index)
                            + " is invalid, OBJ indices start at 1"
                        )
                faces.append([index - 1 for index in face])
            else:
                ignored += 1

    if ignored:
        logger.warning("%s: ignored %d unsupported OBJ records", file_name, ignored)

    for face in faces:
        if max(face) >= len(vertices):
            raise FaceIndexError(
                file_name
                + ": face index "
                + str(max(face) + 1)
                + " exceeds the "
                + str(len(vertices))
                + " vertices in the file"
            )

    mesh = TriMesh(
        numpy.array(vertices, dtype=numpy.float64).reshape(-1, 3),
        numpy.array(faces, dtype=numpy.int64).reshape(-1, 3),
        {"source": file_name, "ignored_records": ignored},
    )
    if require_connected and not mesh.is_connected():
        raise DisconnectedMeshError(file_name + ": the edge graph is not connected")

    logger.debug(
        "loaded %s with %d vertices and %d faces",
        file_name,
        mesh.number_of_vertices,
        mesh.number_of_faces,
    )
    return mesh


def save_obj(mesh: TriMesh, file_name: str, precision: int = 6) -> None:
    """
    Write a triangle mesh to a Wavefront OBJ file

    Parameters
    ----------
    mesh: TriMesh
        The mesh to write
    file_name: str
        Path of the OBJ file
    precision: int, default=6
        Number of decimals written per coordinate

    Returns
    -------
    None
    """
    fmt = "{:." + str(precision) + "f}"
    with open(file_name, "w") as f:
        for v in mesh.vertices:
            f.write("v " + " ".join(fmt.format(float(x)) for x in v) + "\n")
        for face in mesh.faces:
            f.write("f " + " ".join(str(int(i) + 1) for i in face) + "\n")


def tetrahedron() -> TriMesh:
    """
    A regular tetrahedron inscribed in the cube [-1, 1]^3

    Returns
    -------
    TriMesh
        Four vertices and four outward-facing triangles
    """
    return TriMesh(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]],
        [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
    )


def icosahedron() -> TriMesh:
    """
    A regular icosahedron with vertices on the unit sphere

    Returns
    -------
    TriMesh
        Twelve vertices and twenty outward-facing triangles
    """
    phi = (1.0 + numpy.sqrt(5.0)) / 2.0
    vertices = numpy.array(
        [
            [-1, phi, 0],
            [1, phi, 0],
            [-1, -phi, 0],
            [1, -phi, 0],
            [0, -1, phi],
            [0, 1, phi],
            [0, -1, -phi],
            [0, 1, -phi],
            [phi, 0, -1],
            [phi, 0, 1],
            [-phi, 0, -1],
            [-phi, 0, 1],
        ],
        dtype=numpy.float64,
    )
    vertices /= numpy.linalg.norm(vertices, axis=1, keepdims=True)
    faces = [
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ]
    return TriMesh(vertices, faces)


def icosphere(subdivisions: int) -> TriMesh:
    """
    A unit sphere built by repeatedly splitting every icosahedron face into four

    Parameters
    ----------
    subdivisions: int
        Number of splitting rounds; 0 returns the icosahedron

    Returns
    -------
    TriMesh
        A sphere with 10 * 4**subdivisions + 2 vertices

    Examples
    --------
    >>> import dcgnet
    >>> [dcgnet.icosphere(s).number_of_vertices for s in range(4)]
    [12, 42, 162, 642]
    """
    base = icosahedron()
    vertices = [v for v in base.vertices]
    faces = [list(face) for face in base.faces]

    for _ in range(subdivisions):
        midpoints: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                m = (vertices[a] + vertices[b]) / 2.0
                vertices.append(m / numpy.linalg.norm(m))
                midpoints[key] = len(vertices) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = refined

    return TriMesh(numpy.array(vertices), numpy.array(faces))
