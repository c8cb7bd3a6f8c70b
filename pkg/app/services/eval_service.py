import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from app.core.artifacts import write_report
from app.core.exceptions import ParameterError
from app.models.camera import Camera, camera_ring
from app.models.mesh import Mesh
from app.models.normal_map import NormalMap
from app.schemas.pipeline import EvalReport, EvalRingParams, ViewMetrics
from app.services.raster_service import mask_iou, rasterize

logger = logging.getLogger(__name__)


def angular_error_deg(
    first: NormalMap, second: NormalMap, threshold: float = 0.5
) -> Optional[float]:
    """
    Mean angle between decoded normals over the intersection of both masks; None
    when the masks do not overlap.
    """
    overlap = first.mask(threshold) & second.mask(threshold)
    if not overlap.any():
        return None
    cosine = np.sum(first.normals()[overlap] * second.normals()[overlap], axis=-1)
    angles = np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0)))
    return float(np.clip(angles.mean(), 0.0, 180.0))


def compare_views(
    renders: Sequence[NormalMap],
    references: Sequence[NormalMap],
    yaws: Sequence[float],
    threshold: float = 0.5,
) -> EvalReport:
    """Per-view silhouette IoU and normal angular error of two render sets."""
    if not (len(renders) == len(references) == len(yaws)) or not renders:
        raise ParameterError(
            f"Need matching non-empty view lists, got {len(renders)} renders, "
            f"{len(references)} references, {len(yaws)} yaws",
            "views",
        )
    views: List[ViewMetrics] = []
    for index, (render, reference, yaw) in enumerate(zip(renders, references, yaws)):
        views.append(
            ViewMetrics(
                view_index=index,
                yaw=float(yaw),
                iou=mask_iou(render.mask(threshold), reference.mask(threshold)),
                angular_error_deg=angular_error_deg(render, reference, threshold),
            )
        )
    return EvalReport(views=views)


def eval_cameras(base: Camera, ring: EvalRingParams) -> List[Camera]:
    return camera_ring(ring.n_views, ring.yaw_step, base)


def evaluate_meshes(
    mesh: Mesh,
    reference: Mesh,
    cameras: Sequence[Camera],
    threshold: float = 0.5,
) -> EvalReport:
    """Render both meshes over the cameras (hard coverage) and compare per view."""
    report = compare_views(
        [rasterize(mesh, c) for c in cameras],
        [rasterize(reference, c) for c in cameras],
        [c.yaw for c in cameras],
        threshold,
    )
    log_summary(report)
    return report


def evaluate_against_renders(
    mesh: Mesh,
    references: Sequence[NormalMap],
    cameras: Sequence[Camera],
    threshold: float = 0.5,
) -> EvalReport:
    report = compare_views(
        [rasterize(mesh, c) for c in cameras],
        references,
        [c.yaw for c in cameras],
        threshold,
    )
    log_summary(report)
    return report


def log_summary(report: EvalReport) -> None:
    error = report.mean_angular_error_deg
    shown = "absent" if error is None else f"{error:.2f} deg"
    logger.info(
        f"Evaluated {len(report.views)} views: mean IoU {report.mean_iou:.4f}, "
        f"mean angular error {shown}"
    )


def write_eval_report(
    report: EvalReport, path: Path | str, title: str = "eval"
) -> Path:
    records = [view.model_dump() for view in report.views]
    summary = {
        "n_views": len(report.views),
        "mean_iou": report.mean_iou,
        "mean_angular_error_deg": report.mean_angular_error_deg,
    }
    return write_report(path, title, records, summary)
