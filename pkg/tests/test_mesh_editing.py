import numpy as np
import pytest

from app.core.exceptions import MeshTopologyError, ParameterError
from app.models.mesh import Mesh
from app.services.decimation_service import decimate
from app.services.mesh_editing import EditableMesh
from app.services.mesh_service import validate
from app.services.remesh_service import remesh
from tests.conftest import sphere_mesh


class TestEditableMesh:
    def test_round_trip_keeps_mesh(self, octa):
        mesh = EditableMesh(octa).to_mesh()
        np.testing.assert_array_equal(mesh.vertices, octa.vertices)
        np.testing.assert_array_equal(mesh.faces, octa.faces)

    def test_split_edge_keeps_closed_manifold(self, octa):
        editable = EditableMesh(octa)
        middle = editable.split_edge(0, 2)
        np.testing.assert_allclose(editable.positions[middle], [0.5, 0.5, 0.0])
        mesh = editable.to_mesh()
        report = validate(mesh)
        assert mesh.n_vertices == 7
        assert mesh.n_faces == 10
        assert report.is_valid and report.euler_characteristic == 2

    def test_boundary_edge_never_collapses(self):
        editable = EditableMesh(Mesh(np.eye(3), np.array([[0, 1, 2]])))
        assert not editable.can_collapse(0, 1, np.zeros(3), 1e-12)

    def test_degree_and_neighbors(self, octa):
        editable = EditableMesh(octa)
        assert editable.neighbors(4) == {0, 1, 2, 3}
        assert editable.degree(4) == 4
        assert not editable.is_boundary_vertex(4)


class TestDecimate:
    def test_reaches_target_and_stays_valid(self):
        mesh = decimate(sphere_mesh(subdivisions=3), 200)
        report = validate(mesh)
        assert mesh.n_vertices <= 200
        assert report.is_valid and report.is_closed
        assert report.euler_characteristic == 2

    def test_keeps_shape(self):
        mesh = decimate(sphere_mesh(radius=0.5, subdivisions=3), 100)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert radii.min() > 0.4 and radii.max() < 0.6

    def test_small_mesh_returned_unchanged(self, octa):
        assert decimate(octa, 10) is octa

    def test_target_below_minimum(self, sphere):
        with pytest.raises(ParameterError):
            decimate(sphere, 3)

    def test_rejects_non_manifold(self, octa):
        faces = np.vstack([octa.faces, octa.faces[:1]])
        with pytest.raises(MeshTopologyError):
            decimate(Mesh(octa.vertices, faces), 4)


class TestRemesh:
    def test_edges_move_towards_target(self, sphere):
        target = 0.5 * sphere.mean_edge_length()
        mesh = remesh(sphere, target)
        report = validate(mesh)
        assert report.is_valid and report.euler_characteristic == 2
        assert 0.6 * target < mesh.mean_edge_length() < 1.5 * target
        assert mesh.n_vertices > sphere.n_vertices

    def test_coarsening(self):
        fine = sphere_mesh(subdivisions=3)
        mesh = remesh(fine, 2.0 * fine.mean_edge_length())
        assert mesh.n_vertices < fine.n_vertices
        assert validate(mesh).euler_characteristic == 2

    def test_non_positive_target(self, sphere):
        with pytest.raises(ParameterError):
            remesh(sphere, 0.0)

    def test_edge_lengths_cluster_around_target(self, sphere):
        target = 0.8 * sphere.mean_edge_length()
        lengths = remesh(sphere, target).edge_lengths()
        near = (lengths >= 0.5 * target) & (lengths <= 1.5 * target)
        assert near.mean() >= 0.9

    def test_second_pass_barely_changes_edges(self, sphere):
        target = 0.8 * sphere.mean_edge_length()
        once = remesh(sphere, target)
        twice = remesh(once, target)
        change = abs(twice.mean_edge_length() - once.mean_edge_length())
        assert change < 0.1 * once.mean_edge_length()
        assert validate(twice).is_valid
