from typing import Optional

from pydantic import BaseModel, Field, model_validator


class LossWeights(BaseModel):
    """Weights of the five carving objective terms."""

    normal: float = Field(1.0, ge=0)
    mask: float = Field(2.0, ge=0)
    sides: float = Field(0.1, ge=0)
    laplacian: float = Field(10.0, ge=0)
    normal_reg: float = Field(0.1, ge=0)

    @classmethod
    def zeros(cls) -> "LossWeights":
        return cls(normal=0.0, mask=0.0, sides=0.0, laplacian=0.0, normal_reg=0.0)


class CarveConfig(BaseModel):
    """Coarse-to-fine carving schedule.

    `weights` holds the stage-0 values; laplacian and normal_reg ramp linearly to
    `laplacian_final` / `normal_reg_final` over the remesh stages, while the step
    size and sides weight decay geometrically per remesh.
    """

    total_iterations: int = Field(2000, gt=0)
    remesh_interval: int = Field(500, gt=0)
    step_decay_per_remesh: float = Field(0.25, ge=0, lt=1)
    sides_decay_per_remesh: float = Field(0.10, ge=0, lt=1)
    initial_vertices: int = Field(3000, ge=4)
    initial_step_size: Optional[float] = Field(
        None, gt=0, description="Defaults to 1e-3 times the bounding-box diagonal"
    )
    alpha_threshold: float = Field(0.5, gt=0, lt=1)
    weights: LossWeights = LossWeights()
    laplacian_final: float = Field(100.0, ge=0)
    normal_reg_final: float = Field(1.0, ge=0)
    softness: float = Field(1.5, ge=0, description="Silhouette blur width in pixels")
    remesh_edge_factor: float = Field(
        0.85, gt=0, le=1, description="Remesh target as a fraction of the mean edge"
    )
    max_vertices: int = Field(
        6000, ge=4, description="Remeshing stops refining past this vertex count"
    )
    min_edge_pixels: float = Field(1.5, gt=0)
    gradient_clip_factor: float = Field(10.0, gt=0)
    seed: int = 0
    dump_intermediate: bool = False

    @model_validator(mode="after")
    def check_remesh_interval(self) -> "CarveConfig":
        if self.total_iterations % self.remesh_interval != 0:
            raise ValueError("remesh_interval must divide total_iterations")
        return self

    @property
    def stage_count(self) -> int:
        return self.total_iterations // self.remesh_interval

    @property
    def remesh_count(self) -> int:
        """Remeshes performed during a full run (none after the last stage)."""
        return self.stage_count - 1
