import numpy as np
import pytest

from app.core.exceptions import ParameterError
from app.schemas.mesh import (
    BodyPose,
    BodyProxyParams,
    BodyShape,
    CapsuleSegment,
    ProxyKind,
)
from app.services.mesh_service import validate
from app.services.proxy_service import (
    ProxyService,
    body_skeleton,
    make_body_proxy,
    point_segment_distance,
    segment_segment_distance,
)


def assert_closed_sphere_topology(mesh):
    report = validate(mesh)
    assert report.is_valid
    assert report.is_closed
    assert report.euler_characteristic == 2


class TestDistances:
    def test_point_segment(self):
        points = np.array([[0.0, 2.0, 0.0], [0.0, 0.5, 1.0], [3.0, 0.0, 0.0]])
        distances = point_segment_distance(points, (0, 0, 0), (0, 1, 0))
        np.testing.assert_allclose(distances, [1.0, 1.0, 3.0])

    def test_crossing_segments(self):
        d = segment_segment_distance(
            np.array([-1.0, 0, 0]),
            np.array([1.0, 0, 0]),
            np.array([0.0, -1, 1]),
            np.array([0.0, 1, 1]),
        )
        assert d == pytest.approx(1.0)


class TestSimpleProxies:
    def test_sphere(self):
        params = BodyProxyParams(kind=ProxyKind.SPHERE, radius=0.7, subdivisions=2)
        mesh = make_body_proxy("sphere", params)
        assert_closed_sphere_topology(mesh)
        np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 0.7)

    def test_capsule_extent(self):
        params = BodyProxyParams(
            kind=ProxyKind.CAPSULE,
            radius=0.2,
            segment_start=(0.0, -0.5, 0.0),
            segment_end=(0.0, 0.5, 0.0),
        )
        mesh = make_body_proxy(ProxyKind.CAPSULE, params)
        assert_closed_sphere_topology(mesh)
        assert mesh.vertices[:, 1].max() == pytest.approx(0.7)
        assert mesh.vertices[:, 1].min() == pytest.approx(-0.7)

    @pytest.mark.parametrize(
        "params",
        [
            BodyProxyParams(kind=ProxyKind.SPHERE, radius=-1.0),
            BodyProxyParams(kind=ProxyKind.SPHERE, subdivisions=8),
            BodyProxyParams(kind=ProxyKind.CAPSULE, longitude_count=2),
            BodyProxyParams(
                kind=ProxyKind.CAPSULE,
                segment_start=(0.0, 0.2, 0.0),
                segment_end=(0.0, 0.2, 0.0),
            ),
        ],
    )
    def test_invalid_parameters(self, params):
        with pytest.raises(ParameterError):
            make_body_proxy(params.kind, params)


class TestPosedBody:
    def test_skeleton_is_connected_and_symmetric(self):
        segments = body_skeleton(BodyShape(), BodyPose())
        ends = np.array([[s.start, s.end] for s in segments]).reshape(-1, 3)
        mirrored = ends * np.array([-1.0, 1.0, 1.0])
        for point in mirrored:
            assert np.min(np.linalg.norm(ends - point, axis=1)) < 1e-9

    def test_default_body_is_closed_genus_zero(self):
        mesh = make_body_proxy(ProxyKind.POSED_MULTI_CAPSULE)
        assert_closed_sphere_topology(mesh)
        height = mesh.vertices[:, 1].max() - mesh.vertices[:, 1].min()
        assert 1.5 < height < 1.9

    def test_disconnected_segments_rejected(self):
        params = BodyProxyParams(
            segments=[
                CapsuleSegment(start=(0, 0, 0), end=(0, 1, 0), radius=0.1),
                CapsuleSegment(start=(2, 0, 0), end=(2, 1, 0), radius=0.1),
            ]
        )
        with pytest.raises(ParameterError):
            ProxyService(params).posed_multi_capsule()

    def test_non_positive_segment_radius(self):
        params = BodyProxyParams(
            segments=[CapsuleSegment(start=(0, 0, 0), end=(0, 1, 0), radius=0.0)]
        )
        with pytest.raises(ParameterError):
            ProxyService(params).posed_multi_capsule()
