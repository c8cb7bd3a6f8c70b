from pathlib import Path
from typing import Any, Optional

from pydantic import ValidationError as PydanticValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.exceptions import ParameterError
from app.models.camera import Camera
from app.schemas.carve import CarveConfig
from app.schemas.denoiser import DenoiserArchitecture, TrainConfig
from app.schemas.diffusion import GuidanceParams, ResampleParams, ScheduleParams
from app.schemas.mesh import BodyProxyParams
from app.schemas.pipeline import (
    CameraParams,
    CropParams,
    DatasetParams,
    EvalRingParams,
    PathsConfig,
    SweepParams,
    ViewRingParams,
)

ENV_PREFIX = "DUALCARVE_"


class Settings(BaseSettings):
    """
    Run configuration.

    Sources, highest priority first: explicit keyword overrides (CLI flags),
    DUALCARVE_* environment variables, the KEY=value config file, defaults.
    Nested sections use "__", e.g. DUALCARVE_CARVE__TOTAL_ITERATIONS=200.
    """

    model_config = SettingsConfigDict(
        env_prefix=ENV_PREFIX,
        env_nested_delimiter="__",
        extra="ignore",
    )

    seed: int
    resolution: int = 32
    softness: float = 1.5
    alpha_threshold: float = 0.5
    paths: PathsConfig = PathsConfig()
    camera: CameraParams = CameraParams()
    proxy: BodyProxyParams = BodyProxyParams()
    dataset: DatasetParams = DatasetParams()
    schedule: ScheduleParams = ScheduleParams()
    guidance: GuidanceParams = GuidanceParams()
    resample: ResampleParams = ResampleParams()
    carve: CarveConfig = CarveConfig()
    refine_carve: Optional[CarveConfig] = None
    ring: ViewRingParams = ViewRingParams()
    eval_ring: EvalRingParams = EvalRingParams()
    crop: Optional[CropParams] = None
    architecture: DenoiserArchitecture = DenoiserArchitecture()
    training: TrainConfig = TrainConfig()
    sweep: SweepParams = SweepParams()

    @property
    def out_dir(self) -> Path:
        return Path(self.paths.out_dir)

    def resolve(self, relative: str) -> Path:
        """Resolve a configured path against the output directory."""
        path = Path(relative)
        return path if path.is_absolute() else self.out_dir / path

    def base_camera(self) -> Camera:
        """Yaw-0 camera of the run at the configured square resolution."""
        return Camera(
            yaw=0.0,
            pitch=self.camera.pitch,
            scale=self.camera.scale,
            principal_offset=self.camera.principal_offset,
            resolution=(self.resolution, self.resolution),
        )

    def second_stage_carve(self) -> CarveConfig:
        """Carve settings for the refinement re-carve (sides weight forced to 0)."""
        base = self.refine_carve or self.carve
        weights = base.weights.model_copy(update={"sides": 0.0})
        return base.model_copy(update={"weights": weights})


def load_settings(
    config_file: Optional[str | Path] = None, **overrides: Any
) -> Settings:
    """
    Build Settings from a config file plus overrides.

    Raises:
        ParameterError: If the combined configuration is invalid or lacks a seed
    """
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        env_file = str(config_file) if config_file else None
        return Settings(_env_file=env_file, **overrides)
    except PydanticValidationError as exc:
        locations = (".".join(str(p) for p in err["loc"]) for err in exc.errors())
        fields = ", ".join(locations)
        raise ParameterError(f"Invalid configuration: {fields}", fields) from exc
