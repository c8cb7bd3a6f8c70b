import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app.core.exceptions import MeshTopologyError, ParameterError
from app.models.mesh import Adjacency, Mesh
from app.services.mesh_service import (
    differential_coords,
    face_normals,
    hausdorff_distance,
    laplacian_loss,
    normal_consistency_loss,
    require_manifold,
    validate,
    vertex_normals,
)
from tests.conftest import cube_mesh, octahedron, sphere_mesh


def single_triangle() -> Mesh:
    return Mesh(np.eye(3), np.array([[0, 1, 2]]))


class TestMesh:
    def test_face_index_out_of_range(self):
        with pytest.raises(MeshTopologyError):
            Mesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))

    def test_face_repeats_vertex(self):
        with pytest.raises(MeshTopologyError):
            Mesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))

    def test_with_vertices_requires_same_shape(self, octa):
        with pytest.raises(ParameterError):
            octa.with_vertices(np.zeros((5, 3)))

    def test_edges_are_unique(self, octa):
        assert len(octa.edges()) == 12
        assert octa.mean_edge_length() == pytest.approx(np.sqrt(2.0))

    def test_bbox_diagonal(self, octa):
        assert octa.bbox_diagonal() == pytest.approx(2.0 * np.sqrt(3.0))


class TestAdjacency:
    def test_octahedron_rings(self, octa):
        adj = Adjacency.from_mesh(octa)
        assert adj.degrees.tolist() == [4] * 6
        assert adj.neighbors[0].tolist() == [2, 3, 4, 5]
        assert len(adj.face_pairs) == 12

    @given(st.integers(min_value=0, max_value=2))
    def test_neighbor_relation_is_symmetric(self, subdivisions):
        adj = Adjacency.from_mesh(sphere_mesh(subdivisions=subdivisions))
        assert adj.is_symmetric()


class TestValidate:
    def test_closed_sphere(self, sphere):
        report = validate(sphere)
        assert report.is_valid
        assert report.is_closed
        assert report.euler_characteristic == 2

    def test_open_triangle(self):
        report = validate(single_triangle())
        assert report.boundary_edge_count == 3
        assert report.is_manifold
        assert report.euler_characteristic == 1

    def test_flipped_face_breaks_orientation(self, octa):
        faces = octa.faces.copy()
        faces[0] = faces[0][[0, 2, 1]]
        report = validate(Mesh(octa.vertices, faces))
        assert not report.is_oriented
        with pytest.raises(MeshTopologyError):
            require_manifold(Mesh(octa.vertices, faces), "test")

    def test_duplicate_face_is_not_manifold(self, octa):
        faces = np.vstack([octa.faces, octa.faces[:1]])
        report = validate(Mesh(octa.vertices, faces))
        assert report.duplicate_face_count == 1
        assert not report.is_manifold

    def test_degenerate_face_counted(self):
        vertices = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        report = validate(Mesh(vertices, np.array([[0, 1, 2]])))
        assert report.degenerate_face_count == 1
        assert not report.is_valid

    def test_empty_mesh(self):
        report = validate(Mesh.empty())
        assert report.n_faces == 0
        assert report.is_manifold

    def test_report_text_lists_counts(self, octa):
        lines = [line.split() for line in validate(octa).to_text().splitlines()]
        assert ["euler", "characteristic", "2"] in lines
        assert ["manifold", "yes"] in lines


class TestNormals:
    def test_octahedron_face_normals_point_outward(self, octa):
        normals = face_normals(octa)
        centroids = octa.vertices[octa.faces].mean(axis=1)
        assert np.all(np.einsum("ij,ij->i", normals, centroids) > 0)
        np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0)

    def test_sphere_vertex_normals_are_radial(self, sphere):
        normals = vertex_normals(sphere)
        lengths = np.linalg.norm(sphere.vertices, axis=1, keepdims=True)
        radial = sphere.vertices / lengths
        assert np.einsum("ij,ij->i", normals, radial).min() > 0.99


class TestLaplacian:
    def test_octahedron_differential_coords(self, octa):
        np.testing.assert_allclose(differential_coords(octa), octa.vertices, atol=1e-12)

    def test_octahedron_loss_value(self, octa):
        assert laplacian_loss(octa).value == pytest.approx(1.0)

    def test_isolated_vertex_rejected(self, octa):
        mesh = Mesh(np.vstack([octa.vertices, [[3.0, 3.0, 3.0]]]), octa.faces)
        with pytest.raises(MeshTopologyError):
            differential_coords(mesh)
        with pytest.raises(MeshTopologyError):
            laplacian_loss(mesh)

    def test_gradient_matches_finite_difference(self, octa):
        rng = np.random.default_rng(0)
        mesh = octa.with_vertices(octa.vertices + 0.1 * rng.standard_normal((6, 3)))
        result = laplacian_loss(mesh)
        direction = rng.standard_normal((6, 3))
        h = 1e-6
        plus = laplacian_loss(mesh.with_vertices(mesh.vertices + h * direction)).value
        minus = laplacian_loss(mesh.with_vertices(mesh.vertices - h * direction)).value
        numeric = (plus - minus) / (2 * h)
        assert np.sum(result.gradient * direction) == pytest.approx(numeric, rel=1e-5)

    def test_translation_invariant(self, octa):
        moved = octa.translated((0.3, -1.0, 2.0))
        assert laplacian_loss(moved).value == pytest.approx(laplacian_loss(octa).value)


class TestNormalConsistency:
    def test_flat_pair_is_zero(self):
        vertices = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0]])
        mesh = Mesh(vertices, np.array([[0, 1, 2], [0, 2, 3]]))
        result = normal_consistency_loss(mesh)
        assert result.value == pytest.approx(0.0, abs=1e-12)

    def test_octahedron_is_positive(self, octa):
        result = normal_consistency_loss(octa)
        # adjacent octahedron faces meet at cos = 1/3
        assert result.value == pytest.approx((1.0 - 1.0 / 3.0) ** 2)

    def test_single_triangle_has_no_pairs(self):
        with pytest.raises(MeshTopologyError):
            normal_consistency_loss(single_triangle())

    def test_cube_counts_orthogonal_pairs(self):
        # 6 diagonal edges join coplanar triangles, 12 cube edges join orthogonal ones
        result = normal_consistency_loss(cube_mesh())
        assert result.value == pytest.approx(12 / 18)

    def test_gradient_matches_finite_difference(self, octa):
        rng = np.random.default_rng(1)
        mesh = octa.with_vertices(octa.vertices + 0.1 * rng.standard_normal((6, 3)))
        result = normal_consistency_loss(mesh)
        direction = rng.standard_normal((6, 3))
        h = 1e-6
        plus = mesh.with_vertices(mesh.vertices + h * direction)
        minus = mesh.with_vertices(mesh.vertices - h * direction)
        numeric = (
            normal_consistency_loss(plus).value - normal_consistency_loss(minus).value
        ) / (2 * h)
        assert np.sum(result.gradient * direction) == pytest.approx(numeric, rel=1e-5)


class TestHausdorff:
    def test_identity_is_zero(self, sphere):
        assert hausdorff_distance(sphere, sphere) == 0.0

    def test_symmetric(self, octa, sphere):
        assert hausdorff_distance(octa, sphere) == pytest.approx(
            hausdorff_distance(sphere, octa)
        )

    def test_empty_rejected(self, octa):
        with pytest.raises(MeshTopologyError):
            hausdorff_distance(octa, Mesh.empty())
