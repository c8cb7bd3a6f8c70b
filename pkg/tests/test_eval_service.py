import numpy as np
import pytest

from app.core.artifacts import read_report
from app.core.exceptions import ParameterError
from app.models.normal_map import NormalMap
from app.schemas.pipeline import EvalRingParams
from app.services.eval_service import (
    angular_error_deg,
    compare_views,
    eval_cameras,
    evaluate_against_renders,
    evaluate_meshes,
    write_eval_report,
)
from app.services.raster_service import rasterize_views
from tests.conftest import sphere_mesh


def flat_map(z: float) -> NormalMap:
    normal_map = NormalMap.background(8, 8)
    normal_map.pixels[2:6, 2:6] = [0.5, 0.5, (z + 1.0) * 0.5, 1.0]
    return normal_map


class TestAngularError:
    def test_identical(self):
        assert angular_error_deg(flat_map(1.0), flat_map(1.0)) == pytest.approx(0.0)

    def test_opposite(self):
        assert angular_error_deg(flat_map(1.0), flat_map(-1.0)) == pytest.approx(180.0)

    def test_no_overlap(self):
        assert angular_error_deg(flat_map(1.0), NormalMap.background(8, 8)) is None


class TestEvaluate:
    def test_ring_cameras(self, camera):
        cameras = eval_cameras(camera, EvalRingParams())
        assert len(cameras) == 18
        assert cameras[1].yaw == 20.0

    def test_self_comparison(self, sphere, camera):
        cameras = eval_cameras(camera, EvalRingParams(n_views=4, yaw_step=90.0))
        report = evaluate_meshes(sphere, sphere, cameras)
        assert report.mean_iou == 1.0
        assert report.mean_angular_error_deg == pytest.approx(0.0, abs=1e-5)
        assert [v.yaw for v in report.views] == [0.0, 90.0, 180.0, 270.0]

    def test_disjoint_meshes(self, sphere, camera):
        cameras = eval_cameras(camera, EvalRingParams(n_views=2, yaw_step=180.0))
        far = sphere.translated((5.0, 0.0, 0.0))
        report = evaluate_meshes(sphere, far, cameras)
        assert report.mean_iou == 0.0
        assert report.mean_angular_error_deg is None

    def test_iou_matches_pixel_count(self, sphere, camera):
        cameras = eval_cameras(camera, EvalRingParams(n_views=3, yaw_step=30.0))
        smaller = sphere_mesh(radius=0.35)
        references = rasterize_views(sphere, cameras)
        report = evaluate_against_renders(smaller, references, cameras)
        for view, render, reference in zip(
            report.views, rasterize_views(smaller, cameras), references
        ):
            inside = np.count_nonzero(render.mask() & reference.mask())
            either = np.count_nonzero(render.mask() | reference.mask())
            assert view.iou == pytest.approx(inside / either)
            assert 0.0 < view.iou < 1.0

    def test_list_lengths_must_match(self):
        with pytest.raises(ParameterError):
            compare_views([flat_map(1.0)], [], [0.0])

    def test_report_file(self, tmp_path):
        report = compare_views(
            [flat_map(1.0), flat_map(1.0)],
            [flat_map(1.0), NormalMap.background(8, 8)],
            [0.0, 180.0],
        )
        path = write_eval_report(report, tmp_path / "report.txt")
        records, summary = read_report(path)
        assert [r["angular_error_deg"] for r in records] == [0.0, None]
        assert summary["n_views"] == 2
        assert summary["mean_iou"] == pytest.approx(0.5)
        assert summary["mean_angular_error_deg"] == 0.0
