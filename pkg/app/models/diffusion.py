from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import numpy as np

from app.core.exceptions import ParameterError


@dataclass(frozen=True)
class VarianceSchedule:
    """
    beta/alpha/alpha_bar tables for t = 1..T (stored zero-based).

    alpha_t = 1 - beta_t and alpha_bar_t is the running product of alpha up to t.
    """

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        if len(betas) == 0:
            raise ParameterError("Schedule needs at least one timestep", "timesteps")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ParameterError("Every beta must lie in (0, 1)", "betas")
        if np.any(np.diff(betas) <= 0):
            raise ParameterError("Betas must be strictly increasing", "betas")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    def check_timestep(self, t: int) -> int:
        if not 1 <= t <= self.timesteps:
            raise ParameterError(
                f"Timestep must lie in [1, {self.timesteps}]", "t", str(t)
            )
        return int(t)

    def beta(self, t: int) -> float:
        return float(self.betas[self.check_timestep(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self.check_timestep(t) - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.check_timestep(t) - 1])


@dataclass(frozen=True)
class Condition:
    """
    Conditioning input for a denoiser call.

    A blank condition is an all-zero array with `blank` set; denoisers use the flag to
    switch to their unconditional embedding.
    """

    array: np.ndarray
    blank: bool = False

    @classmethod
    def of(cls, array: np.ndarray) -> "Condition":
        return cls(np.asarray(array, dtype=np.float64), False)

    @classmethod
    def blank_like(cls, shape: Tuple[int, ...]) -> "Condition":
        return cls(np.zeros(shape), True)

    def as_blank(self) -> "Condition":
        return Condition.blank_like(self.array.shape)


class Denoiser(Protocol):
    """Noise predictor eps_hat(x_t, t, cond) with the shape of x_t."""

    def predict(
        self, x_t: np.ndarray, t: int, cond: Optional[Condition]
    ) -> np.ndarray: ...
