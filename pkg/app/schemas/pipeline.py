from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator

from app.schemas.mesh import Point3


class CameraParams(BaseModel):
    """Base weak-perspective camera shared by every render of a run."""

    scale: float = Field(1.0, gt=0)
    pitch: float = 0.0
    principal_offset: Tuple[float, float] = (0.0, 0.0)


class ViewRingParams(BaseModel):
    """Yaw ring used for refinement renders."""

    n_views: int = Field(36, ge=1)
    yaw_step: float = Field(10.0, gt=0)

    @field_validator("n_views")
    @classmethod
    def validate_even(cls, v):
        if v % 2 != 0:
            raise ValueError("n_views must be even so every view has an opposite")
        return v


class EvalRingParams(BaseModel):
    """Yaw ring used for evaluation renders."""

    n_views: int = Field(18, ge=1)
    yaw_step: float = Field(20.0, gt=0)


class CropParams(BaseModel):
    """Close-up camera aimed at a mesh region (the face by default)."""

    center: Point3 = (0.0, 0.72, 0.0)
    extent: float = Field(0.35, gt=0, description="Half-width of the crop window")


class DatasetParams(BaseModel):
    """Ranges sampled by the synthetic dataset generator."""

    n_examples: int = Field(8, ge=1)
    arm_abduction_range: Tuple[float, float] = (30.0, 75.0)
    leg_abduction_range: Tuple[float, float] = (2.0, 12.0)
    elbow_flexion_range: Tuple[float, float] = (0.0, 30.0)
    height_range: Tuple[float, float] = (1.55, 1.75)
    limb_radius_range: Tuple[float, float] = (0.9, 1.2)
    displacement_amplitude: Tuple[float, float] = (0.01, 0.03)
    garment_amplitude: Tuple[float, float] = (0.0, 0.05)
    grid_resolution: int = Field(48, ge=16)


class PathsConfig(BaseModel):
    """Artifact locations, relative paths resolved under the output directory."""

    out_dir: str = "runs/default"
    dataset_dir: str = "dataset"
    checkpoint: str = "checkpoints/denoiser.ckpt"


class ViewMetrics(BaseModel):
    """Per-view comparison of two renders."""

    view_index: int
    yaw: float
    iou: float = Field(ge=0, le=1)
    angular_error_deg: Optional[float] = Field(None, ge=0, le=180)


class EvalReport(BaseModel):
    """Silhouette IoU and normal angular error over a view ring."""

    views: List[ViewMetrics]

    @property
    def mean_iou(self) -> float:
        return sum(v.iou for v in self.views) / len(self.views)

    @property
    def mean_angular_error_deg(self) -> Optional[float]:
        values = [
            v.angular_error_deg for v in self.views if v.angular_error_deg is not None
        ]
        if not values:
            return None
        return sum(values) / len(values)


class ManifestEntry(BaseModel):
    """One written artifact."""

    stage: str
    path: str
    sha256: str
    size_bytes: int


class RunManifest(BaseModel):
    """Hashes of every artifact produced by a run."""

    seed: int
    entries: List[ManifestEntry] = []


class SweepParams(BaseModel):
    """Refinement ablation grids: (t0, K) settings and (n_views, yaw_step) rings."""

    resample_grid: List[Tuple[float, int]] = [(0.02, 1), (0.02, 2), (0.05, 2), (0.1, 2)]
    ring_grid: List[Tuple[int, float]] = [(36, 10.0), (18, 20.0), (12, 30.0)]
