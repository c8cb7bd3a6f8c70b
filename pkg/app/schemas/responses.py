"""
Request and response schemas for the HTTP endpoints.

Meshes travel as plain vertex/face lists and normal maps as nested H x W x 4 pixel
lists, so every payload is documented in the OpenAPI schema.
"""

from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.models.camera import Camera
from app.models.mesh import Mesh
from app.models.normal_map import NormalMap
from app.schemas.mesh import Point3
from app.schemas.pipeline import CameraParams, EvalReport, EvalRingParams, ViewMetrics


class MeshPayload(BaseModel):
    """Indexed triangle mesh with counter-clockwise, 0-based faces."""

    vertices: List[Point3] = Field(..., description="Vertex positions (x, y, z)")
    faces: List[Tuple[int, int, int]] = Field(
        ..., description="Vertex indices of each triangle", examples=[[[0, 1, 2]]]
    )

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "MeshPayload":
        return cls(vertices=mesh.vertices.tolist(), faces=mesh.faces.tolist())

    def to_mesh(self) -> Mesh:
        return Mesh(np.asarray(self.vertices, dtype=np.float64), np.asarray(self.faces))


class ViewRequest(BaseModel):
    """Camera placement shared by render and evaluation requests."""

    camera: CameraParams = CameraParams()
    resolution: int = Field(32, ge=8, le=256, description="Square render size")
    threshold: float = Field(0.5, gt=0, lt=1, description="Alpha coverage threshold")

    def base_camera(self, yaw: float = 0.0) -> Camera:
        return Camera(
            yaw=yaw,
            pitch=self.camera.pitch,
            scale=self.camera.scale,
            principal_offset=self.camera.principal_offset,
            resolution=(self.resolution, self.resolution),
        )


class DecimateRequest(BaseModel):
    mesh: MeshPayload
    target_vertices: int = Field(..., ge=4, examples=[500])


class RenderRequest(ViewRequest):
    """Render one view of a mesh."""

    mesh: MeshPayload
    yaw: float = Field(0.0, description="Camera yaw in degrees")
    softness: float = Field(0.0, ge=0, description="Silhouette blur width in pixels")


class RenderResponse(BaseModel):
    height: int
    width: int
    coverage: float = Field(..., description="Fraction of pixels above the threshold")
    pixels: List[List[List[float]]] = Field(
        ..., description="H x W x 4 buffer: encoded normal rgb and alpha"
    )

    @classmethod
    def from_normal_map(
        cls, normal_map: NormalMap, threshold: float
    ) -> "RenderResponse":
        height, width = normal_map.resolution
        return cls(
            height=height,
            width=width,
            coverage=float(normal_map.mask(threshold).mean()),
            pixels=normal_map.pixels.tolist(),
        )


class EvaluationRequest(ViewRequest):
    """Compare a mesh against a reference mesh over a yaw ring."""

    mesh: MeshPayload
    reference: MeshPayload
    ring: EvalRingParams = EvalRingParams()


class EvaluationResponse(BaseModel):
    views: List[ViewMetrics]
    mean_iou: float = Field(..., ge=0, le=1)
    mean_angular_error_deg: Optional[float] = Field(
        None, description="Absent when no view has overlapping silhouettes"
    )

    @classmethod
    def from_report(cls, report: EvalReport) -> "EvaluationResponse":
        return cls(
            views=report.views,
            mean_iou=report.mean_iou,
            mean_angular_error_deg=report.mean_angular_error_deg,
        )


class ServiceInfoResponse(BaseModel):
    message: str = Field(..., examples=["Dual normal-map carving API"])
    version: str = Field(..., examples=["0.1.0"])
