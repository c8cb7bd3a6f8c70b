import math
from typing import Optional

from pydantic import BaseModel, Field


class ScheduleParams(BaseModel):
    """Linear variance schedule; unset betas scale the 1000-step range by 1000/T."""

    timesteps: int = Field(100, ge=1)
    beta_start: Optional[float] = None
    beta_end: Optional[float] = None


class GuidanceParams(BaseModel):
    """
    Classifier-free guidance strength, training-time condition dropout and the
    number of harmonization repeats per timestep when completing a known front.
    """

    strength: float = Field(2.0, description="lambda; 1 disables guidance")
    dropout_prob: float = Field(0.10, ge=0, le=1)
    harmonization_steps: int = Field(20, ge=1, description="U repeats per timestep")


class ResampleParams(BaseModel):
    """Perturb-and-denoise depth (fraction of T) and repeat count."""

    t0: float = Field(0.02, gt=0, lt=1)
    repeats: int = Field(2, ge=1)

    def timestep(self, total_timesteps: int) -> int:
        """Perturbation timestep t' = round(t0 * T), half-up."""
        return int(math.floor(self.t0 * total_timesteps + 0.5))
