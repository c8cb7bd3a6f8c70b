import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from app.core.exceptions import ParameterError, RasterError
from app.models.camera import Camera, camera_ring, crop_camera, opposite_view
from app.models.mesh import Mesh
from app.models.normal_map import (
    NormalMap,
    decode_normal,
    encode_normal,
    pack_dual,
    unpack_dual,
)
from app.services.raster_service import (
    mask_iou,
    mirror_iou,
    rasterize,
    rasterize_backward,
    rasterize_views,
    render_tensor,
)
from tests.conftest import sphere_mesh


def tilted_triangle() -> Mesh:
    vertices = np.array([[-0.5, -0.4, 0.1], [0.5, -0.3, -0.2], [0.0, 0.5, 0.05]])
    return Mesh(vertices, np.array([[0, 1, 2]]))


class TestCamera:
    def test_ring_yaws(self):
        ring = camera_ring(36, 10.0, Camera())
        assert [c.yaw for c in ring[:3]] == [0.0, 10.0, 20.0]
        assert ring[-1].yaw == pytest.approx(350.0)

    def test_ring_beyond_full_turn(self):
        with pytest.raises(ParameterError):
            camera_ring(36, 11.0, Camera())

    def test_ring_needs_a_view(self):
        with pytest.raises(ParameterError):
            camera_ring(0, 10.0, Camera())

    @pytest.mark.parametrize("index,expected", [(0, 18), (5, 23), (20, 2)])
    def test_opposite_view(self, index, expected):
        assert opposite_view(index, 36) == expected

    def test_opposite_view_odd_ring(self):
        with pytest.raises(ParameterError):
            opposite_view(0, 35)

    def test_identity_rotation_at_yaw_zero(self):
        np.testing.assert_allclose(Camera().rotation(), np.eye(3), atol=1e-15)

    def test_yaw_90_faces_positive_x(self):
        rotated = Camera(yaw=90.0).rotation() @ np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(rotated, [0.0, 0.0, 1.0], atol=1e-12)

    def test_pixel_size(self):
        assert Camera(scale=2.0, resolution=(32, 32)).pixel_size_world() == 1.0 / 32

    def test_crop_camera_rejects_extent(self):
        with pytest.raises(ParameterError):
            crop_camera(Camera(), (0.0, 0.0, 0.0), 0.0)


class TestNormalEncoding:
    @given(
        st.floats(-1.0, 1.0),
        st.floats(-1.0, 1.0),
        st.floats(0.05, 1.0),
    )
    def test_decode_inverts_encode(self, x, y, z):
        normal = np.array([x, y, z]) / np.linalg.norm([x, y, z])
        decoded = decode_normal(encode_normal(normal))
        np.testing.assert_allclose(decoded, normal, atol=1e-9)

    def test_encode_rejects_short_normals(self):
        with pytest.raises(ParameterError):
            encode_normal(np.array([0.5, 0.0, 0.0]))

    def test_decode_rejects_out_of_range(self):
        with pytest.raises(ParameterError):
            decode_normal(np.array([1.2, 0.5, 0.5]))

    def test_background_decodes_to_zero(self):
        np.testing.assert_array_equal(decode_normal(np.full(3, 0.5)), np.zeros(3))


class TestNormalMap:
    def test_shape_checked(self):
        with pytest.raises(ParameterError):
            NormalMap(np.zeros((4, 4, 3)))

    def test_sample_space(self, sphere, camera):
        normal_map = rasterize(sphere, camera)
        sample = normal_map.to_sample()
        assert sample.shape == (4, 32, 32)
        assert sample.min() >= -1.0 and sample.max() <= 1.0
        restored = NormalMap.from_sample(sample)
        np.testing.assert_allclose(restored.pixels, normal_map.pixels, atol=1e-12)

    def test_dual_packing(self, sphere, camera):
        front = rasterize(sphere, camera)
        back = rasterize(sphere, camera.with_yaw(180.0))
        dual = pack_dual(front, back)
        assert dual.shape == (8, 32, 32)
        unpacked_front, unpacked_back = unpack_dual(dual)
        np.testing.assert_allclose(unpacked_back.pixels, back.pixels, atol=1e-12)

    def test_dual_resolution_mismatch(self):
        with pytest.raises(ParameterError):
            pack_dual(NormalMap.background(8, 8), NormalMap.background(16, 16))

    def test_unpack_needs_eight_channels(self):
        with pytest.raises(ParameterError):
            unpack_dual(np.zeros((4, 8, 8)))


class TestRasterize:
    def test_sphere_coverage(self, sphere, camera):
        normal_map = rasterize(sphere, camera)
        covered = int(normal_map.mask().sum())
        # disk of radius 8 px
        assert 170 < covered < 230
        assert set(np.unique(normal_map.alpha)) <= {0.0, 1.0}

    def test_center_faces_viewer(self, sphere, camera):
        normal_map = rasterize(sphere, camera)
        assert normal_map.alpha[16, 16] == 1.0
        assert normal_map.pixels[16, 16, 2] > 0.95
        assert normal_map.normals()[normal_map.mask()][:, 2].mean() > 0.5

    def test_background(self, sphere, camera):
        normal_map = rasterize(sphere, camera)
        np.testing.assert_array_equal(normal_map.pixels[0, 0], [0.5, 0.5, 0.5, 0.0])

    def test_empty_mesh(self, camera):
        normal_map = rasterize(Mesh.empty(), camera)
        assert not normal_map.mask().any()

    def test_depth_translation_invariant(self, sphere, camera):
        moved = sphere.translated((0.0, 0.0, 3.0))
        expected = rasterize(sphere, camera).pixels
        actual = rasterize(moved, camera).pixels
        np.testing.assert_allclose(actual, expected, atol=1e-12)

    def test_sphere_is_mirror_consistent(self, sphere, camera):
        front = rasterize(sphere, camera)
        back = rasterize(sphere, camera.with_yaw(180.0))
        assert mirror_iou(front, back) > 0.95

    def test_crop_camera_fills_frame(self, sphere, camera):
        crop = crop_camera(camera, (0.0, 0.0, 0.0), 0.25)
        assert rasterize(sphere, crop).mask().all()

    def test_soft_alpha_blurs_silhouette(self, sphere, camera):
        soft = rasterize(sphere, camera, softness=1.5)
        partial = (soft.alpha > 0.01) & (soft.alpha < 0.99)
        assert partial.any()
        assert soft.alpha[16, 16] > 0.99

    @pytest.mark.parametrize("angle", [37.0, -120.0])
    def test_turning_the_mesh_matches_turning_the_camera(self, camera, angle):
        blob = sphere_mesh(0.5, 2)
        blob = Mesh(blob.vertices * [1.0, 0.6, 0.4] + [0.1, 0.0, 0.05], blob.faces)
        turned = rasterize(blob.rotated_about_vertical(angle), camera)
        orbited = rasterize(blob, camera.with_yaw(-angle))
        np.testing.assert_allclose(turned.pixels, orbited.pixels, atol=1e-9)

    def test_soft_alpha_sides_of_the_silhouette(self, camera):
        triangle = tilted_triangle()
        hard = rasterize(triangle, camera).mask()
        soft = rasterize(triangle, camera, softness=1.5).alpha
        assert np.all(soft[hard] >= 0.5)
        assert np.all(soft[~hard] < 0.5)
        assert np.any((soft > 0.0) & ~hard)

    def test_views_follow_cameras(self, sphere, camera):
        maps = rasterize_views(sphere, camera_ring(4, 90.0, camera))
        assert len(maps) == 4
        assert all(m.resolution == (32, 32) for m in maps)

    def test_negative_softness(self, sphere, camera):
        with pytest.raises(RasterError):
            rasterize(sphere, camera, softness=-1.0)

    @pytest.mark.parametrize(
        "bad", [Camera(scale=0.0, resolution=(32, 32)), Camera(resolution=(4, 4))]
    )
    def test_degenerate_camera(self, sphere, bad):
        with pytest.raises(RasterError):
            rasterize(sphere, bad)


class TestBackward:
    def test_shape_mismatch(self, sphere, camera):
        with pytest.raises(RasterError):
            rasterize_backward(sphere, camera, 1.5, np.zeros((16, 16, 4)))

    def test_zero_upstream(self, sphere, camera):
        result = rasterize_backward(sphere, camera, 1.5, np.zeros((32, 32, 4)))
        np.testing.assert_array_equal(result.vertices, np.zeros_like(sphere.vertices))

    def test_growing_increases_coverage(self, sphere, camera):
        upstream = np.zeros((32, 32, 4))
        upstream[..., 3] = 1.0
        gradient = rasterize_backward(sphere, camera, 1.5, upstream).vertices
        radial = np.einsum("ij,ij->", gradient, sphere.vertices)
        assert radial > 0

    def test_red_channel_gradient_matches_finite_difference(self, camera):
        triangle = tilted_triangle()
        upstream = np.zeros((32, 32, 4))
        upstream[..., 0] = 1.0
        vertices = triangle.vertices
        gradient = rasterize_backward(triangle, camera, 0.0, upstream).vertices
        assert np.abs(gradient).max() > 0
        h = 1e-4
        numeric = np.zeros_like(gradient)
        for vertex in range(3):
            for axis in range(3):
                step = np.zeros_like(triangle.vertices)
                step[vertex, axis] = h
                plus = rasterize(triangle.with_vertices(vertices + step), camera)
                minus = rasterize(triangle.with_vertices(vertices - step), camera)
                np.testing.assert_array_equal(plus.mask(), minus.mask())
                numeric[vertex, axis] = (
                    plus.pixels[..., 0].sum() - minus.pixels[..., 0].sum()
                ) / (2 * h)
        np.testing.assert_allclose(gradient, numeric, rtol=1e-4, atol=1e-6)

    def test_soft_alpha_grows_when_a_corner_moves_out(self, camera):
        triangle = tilted_triangle()
        upstream = np.zeros((32, 32, 4))
        upstream[..., 3] = 1.0
        gradient = rasterize_backward(triangle, camera, 1.5, upstream).vertices
        outward = np.zeros_like(triangle.vertices)
        outward[2] = triangle.vertices[2] - triangle.vertices.mean(axis=0)
        outward[2, 2] = 0.0
        h = 1e-3
        moved = triangle.with_vertices(triangle.vertices + h * outward)
        grown = rasterize(moved, camera, 1.5)
        base = rasterize(triangle, camera, 1.5)
        assert np.sum(gradient * outward) > 0
        assert grown.alpha.sum() > base.alpha.sum()

    def test_render_tensor_alpha_only_keeps_background_rgb(self, sphere, camera):
        vertices = torch.as_tensor(sphere.vertices)
        rendered = render_tensor(vertices, sphere.faces, camera, 1.5, alpha_only=True)
        assert torch.all(rendered[..., :3] == 0.5)


class TestMaskIou:
    def test_both_empty(self):
        assert mask_iou(np.zeros((4, 4), bool), np.zeros((4, 4), bool)) == 1.0

    def test_disjoint(self):
        first = np.zeros((4, 4), bool)
        second = np.zeros((4, 4), bool)
        first[0, 0] = True
        second[3, 3] = True
        assert mask_iou(first, second) == 0.0

    def test_partial(self):
        first = np.zeros((4, 4), bool)
        second = np.zeros((4, 4), bool)
        first[0, :2] = True
        second[0, 1:3] = True
        assert mask_iou(first, second) == pytest.approx(1.0 / 3.0)

    def test_shape_mismatch(self):
        with pytest.raises(RasterError):
            mask_iou(np.zeros((4, 4), bool), np.zeros((5, 5), bool))
