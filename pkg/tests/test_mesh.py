import doctest
import os
import tempfile
import unittest

import numpy
import numpy.testing
from hypothesis import given, settings, strategies

import dcgnet
import dcgnet.mesh
from dcgnet.errors import (
    DisconnectedMeshError,
    FaceIndexError,
    MeshError,
    NonTriangleFaceError,
    ObjParseError,
)


def load_tests(loader, tests, ignore):
    tests.addTests(doctest.DocTestSuite(dcgnet.mesh))
    return tests


def _write(directory: str, text: str) -> str:
    file_name = os.path.join(directory, "mesh.obj")
    with open(file_name, "w") as f:
        f.write(text)
    return file_name


class TestObjInputOutput(unittest.TestCase):
    def test_round_trip_preserves_vertex_order(self):
        mesh = dcgnet.icosphere(1)
        with tempfile.TemporaryDirectory() as directory:
            file_name = os.path.join(directory, "sphere.obj")
            dcgnet.save_obj(mesh, file_name, precision=12)
            loaded = dcgnet.load_obj(file_name)
        numpy.testing.assert_allclose(loaded.vertices, mesh.vertices, atol=1e-12)
        numpy.testing.assert_array_equal(loaded.faces, mesh.faces)

    def test_ignored_records_are_counted(self):
        text = "# tetra\nvn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1\n"
        with tempfile.TemporaryDirectory() as directory:
            with self.assertLogs("dcgnet.mesh", level="WARNING"):
                mesh = dcgnet.load_obj(_write(directory, text))
        self.assertEqual(mesh.metadata["ignored_records"], 2)
        self.assertEqual(mesh.number_of_faces, 1)

    def test_quad_face_is_rejected(self):
        text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(NonTriangleFaceError):
                dcgnet.load_obj(_write(directory, text))

    def test_out_of_range_face_index_is_rejected(self):
        text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n"
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(FaceIndexError):
                dcgnet.load_obj(_write(directory, text))

    def test_zero_face_index_is_rejected(self):
        text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n"
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(FaceIndexError):
                dcgnet.load_obj(_write(directory, text))

    def test_malformed_vertex_is_rejected(self):
        text = "v 0 zero 0\n"
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(ObjParseError):
                dcgnet.load_obj(_write(directory, text))

    def test_disconnected_template_is_rejected(self):
        text = (
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 5 0 0\nv 6 0 0\nv 5 1 0\n"
            "f 1 2 3\nf 4 5 6\n"
        )
        with tempfile.TemporaryDirectory() as directory:
            file_name = _write(directory, text)
            with self.assertRaises(DisconnectedMeshError):
                dcgnet.load_obj(file_name)
            mesh = dcgnet.load_obj(file_name, require_connected=False)
        self.assertFalse(mesh.is_connected())

    def test_errors_are_value_errors(self):
        self.assertTrue(issubclass(MeshError, ValueError))
        self.assertEqual(MeshError.exit_code, 3)


class TestAdjacency(unittest.TestCase):
    def test_self_looped_symmetric_normalization(self):
        mesh = dcgnet.icosahedron()
        adjacency = dcgnet.build_adjacency(mesh)
        dense = adjacency.dense()
        # every icosahedron vertex has five neighbors, six with the self loop
        expected = (numpy.eye(12) + adjacency.structure(include_self=False)) / 6.0
        numpy.testing.assert_allclose(dense, expected, atol=1e-15)
        numpy.testing.assert_allclose(dense, dense.T, atol=1e-15)

    def test_binary_adjacency_counts_edges(self):
        mesh = dcgnet.tetrahedron()
        adjacency = dcgnet.build_adjacency(mesh, add_self_loops=False, normalize=False)
        self.assertEqual(adjacency.normalization, "none")
        numpy.testing.assert_array_equal(adjacency.dense(), numpy.ones([4, 4]) - numpy.eye(4))

    def test_row_normalization_sums_to_one(self):
        mesh = dcgnet.icosphere(1)
        adjacency = dcgnet.build_adjacency(mesh, normalization="row")
        numpy.testing.assert_allclose(adjacency.dense().sum(axis=1), 1.0, atol=1e-12)

    def test_unknown_normalization(self):
        with self.assertRaises(ValueError):
            dcgnet.build_adjacency(dcgnet.tetrahedron(), normalization="spectral")

    def test_faceless_mesh_has_only_self_loops(self):
        mesh = dcgnet.TriMesh(numpy.zeros([2, 3]), numpy.zeros([0, 3], dtype=int))
        adjacency = dcgnet.build_adjacency(mesh)
        numpy.testing.assert_array_equal(adjacency.dense(), numpy.eye(2))

    @settings(max_examples=20, deadline=None)
    @given(strategies.integers(min_value=0, max_value=2))
    def test_symmetric_normalization_oracle(self, subdivisions):
        mesh = dcgnet.icosphere(subdivisions)
        n = mesh.number_of_vertices
        binary = numpy.eye(n)
        for i, j in mesh.edges:
            binary[i, j] = binary[j, i] = 1.0
        degree = binary.sum(axis=1)
        expected = binary / numpy.sqrt(numpy.outer(degree, degree))
        numpy.testing.assert_allclose(dcgnet.build_adjacency(mesh).dense(), expected, atol=1e-14)


class TestTriMesh(unittest.TestCase):
    def test_generators(self):
        self.assertEqual(dcgnet.tetrahedron().number_of_vertices, 4)
        self.assertEqual(dcgnet.icosphere(1).number_of_vertices, 42)
        self.assertEqual(dcgnet.icosphere(2).number_of_faces, 320)
        for mesh in (dcgnet.tetrahedron(), dcgnet.icosahedron(), dcgnet.icosphere(2)):
            self.assertTrue(mesh.is_connected())
            # closed triangle meshes satisfy 3F = 2E
            self.assertEqual(3 * mesh.number_of_faces, 2 * len(mesh.edges))

    def test_mesh_is_immutable(self):
        mesh = dcgnet.tetrahedron()
        with self.assertRaises(ValueError):
            mesh.vertices[0, 0] = 5.0

    def test_repeated_face_vertex(self):
        with self.assertRaises(MeshError):
            dcgnet.TriMesh(numpy.zeros([3, 3]), [[0, 0, 1]])

    def test_with_vertices_keeps_faces(self):
        mesh = dcgnet.icosahedron()
        moved = mesh.with_vertices(2.0 * mesh.vertices)
        numpy.testing.assert_array_equal(moved.faces, mesh.faces)
        self.assertAlmostEqual(moved.bounding_box_diagonal, 2.0 * mesh.bounding_box_diagonal)
        with self.assertRaises(MeshError):
            mesh.with_vertices(numpy.zeros([3, 3]))

    def test_neighbors_are_sorted(self):
        neighbors = dcgnet.tetrahedron().neighbors()
        self.assertEqual(neighbors[0], [1, 2, 3])
        self.assertEqual(neighbors[3], [0, 1, 2])
