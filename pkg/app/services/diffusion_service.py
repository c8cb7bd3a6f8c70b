"""
Diffusion-process mathematics over an abstract denoiser.

Samples are numpy arrays with the channel axis third from the end, (..., C, H, W);
leading axes are independent chains. Every random draw goes through
`rng.standard_normal(shape)` so a run is fully determined by its generator.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from tqdm import tqdm

from app.core.exceptions import ParameterError
from app.core.service_utils import ensure_finite, ensure_positive, ensure_same_shape
from app.models.diffusion import Condition, Denoiser, VarianceSchedule
from app.schemas.diffusion import GuidanceParams, ResampleParams, ScheduleParams

logger = logging.getLogger(__name__)

REFERENCE_TIMESTEPS = 1000
REFERENCE_BETA_START = 1e-4
REFERENCE_BETA_END = 0.02
MAX_SCALED_BETA = 0.5
FRONT_CHANNELS = 4


def linear_schedule(
    timesteps: int,
    beta_start: Optional[float] = None,
    beta_end: Optional[float] = None,
) -> VarianceSchedule:
    """
    Betas spaced linearly from beta_start to beta_end.

    Unset endpoints scale the usual 1000-step range (1e-4, 0.02) by 1000 / T so that
    alpha_bar_T stays close to zero for short chains; a scaled endpoint is capped
    at 0.5.

    Raises:
        ParameterError: Unless 0 < beta_start < beta_end < 1
    """
    if timesteps < 1:
        raise ParameterError(
            "timesteps must be at least 1", "timesteps", str(timesteps)
        )
    factor = REFERENCE_TIMESTEPS / timesteps
    if beta_start is None:
        beta_start = min(REFERENCE_BETA_START * factor, 0.1 * MAX_SCALED_BETA)
    if beta_end is None:
        beta_end = min(REFERENCE_BETA_END * factor, MAX_SCALED_BETA)
    if not 0 < beta_start < beta_end < 1:
        raise ParameterError(
            f"Need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})",
            "beta_end",
            str(beta_end),
        )
    if timesteps == 1:
        return VarianceSchedule(np.array([beta_start]))
    return VarianceSchedule(np.linspace(beta_start, beta_end, timesteps))


def schedule_from_params(params: ScheduleParams) -> VarianceSchedule:
    return linear_schedule(params.timesteps, params.beta_start, params.beta_end)


def forward_sample(
    x0: np.ndarray, t: int, noise: np.ndarray, schedule: VarianceSchedule
) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    ensure_same_shape(x0, noise, "forward_sample")
    alpha_bar = schedule.alpha_bar(t)
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * noise


def forward_step(
    x_prev: np.ndarray, t: int, noise: np.ndarray, schedule: VarianceSchedule
) -> np.ndarray:
    """One step of the forward chain q(x_t | x_{t-1})."""
    beta = schedule.beta(t)
    return np.sqrt(1.0 - beta) * x_prev + np.sqrt(beta) * noise


def posterior_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    schedule: VarianceSchedule,
    noise: np.ndarray,
) -> np.ndarray:
    """
    x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t)
              + sqrt(beta_t) noise
    """
    alpha = schedule.alpha(t)
    beta = schedule.beta(t)
    alpha_bar = schedule.alpha_bar(t)
    mean = (x_t - beta / np.sqrt(1.0 - alpha_bar) * eps_hat) / np.sqrt(alpha)
    return mean + np.sqrt(beta) * noise


def cfg_combine(
    eps_cond: np.ndarray, eps_uncond: np.ndarray, strength: float
) -> np.ndarray:
    """strength * eps_cond + (1 - strength) * eps_uncond."""
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    ensure_same_shape(eps_cond, eps_uncond, "cfg_combine")
    return strength * eps_cond + (1.0 - strength) * eps_uncond


def guided_eps(
    denoiser: Denoiser,
    x_t: np.ndarray,
    t: int,
    cond: Optional[Condition],
    strength: float,
) -> np.ndarray:
    """Guided noise estimate; a single conditional call when strength is 1."""
    if cond is None or cond.blank:
        return denoiser.predict(x_t, t, cond)
    eps_cond = denoiser.predict(x_t, t, cond)
    if strength == 1.0:
        return eps_cond
    return cfg_combine(eps_cond, denoiser.predict(x_t, t, cond.as_blank()), strength)


def _step_noise(rng: np.random.Generator, shape: Tuple[int, ...], t: int) -> np.ndarray:
    return rng.standard_normal(shape) if t > 1 else np.zeros(shape)


def _reverse(
    x: np.ndarray,
    start: int,
    denoiser: Denoiser,
    cond: Optional[Condition],
    schedule: VarianceSchedule,
    guidance: GuidanceParams,
    rng: np.random.Generator,
    desc: str,
) -> np.ndarray:
    for t in tqdm(range(start, 0, -1), desc=desc, leave=False):
        eps = guided_eps(denoiser, x, t, cond, guidance.strength)
        x = posterior_step(x, eps, t, schedule, _step_noise(rng, x.shape, t))
    return x


def sample(
    denoiser: Denoiser,
    cond: Optional[Condition],
    schedule: VarianceSchedule,
    guidance: GuidanceParams,
    shape: Tuple[int, ...],
    rng: np.random.Generator,
) -> np.ndarray:
    """Full reverse chain from x_T ~ N(0, I) down to x_0."""
    x = rng.standard_normal(shape)
    x = _reverse(
        x, schedule.timesteps, denoiser, cond, schedule, guidance, rng, "sample"
    )
    logger.debug(f"Sampled {shape} over {schedule.timesteps} steps")
    return x


def sample_separate(
    denoiser: Denoiser,
    cond: Optional[Condition],
    schedule: VarianceSchedule,
    guidance: GuidanceParams,
    shape: Tuple[int, ...],
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Front and back taken from two independent dual chains, for comparing dual
    against separate generation.
    """
    first = sample(denoiser, cond, schedule, guidance, shape, rng)
    second = sample(denoiser, cond, schedule, guidance, shape, rng)
    result = first.copy()
    result[..., FRONT_CHANNELS:, :, :] = second[..., FRONT_CHANNELS:, :, :]
    return result


def resample(
    x: np.ndarray,
    denoiser: Denoiser,
    cond: Optional[Condition],
    params: ResampleParams,
    schedule: VarianceSchedule,
    guidance: GuidanceParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Perturb-and-denoise: K times, noise the sample to t' = round(t0 * T) with the
    closed-form forward process and run the reverse chain from t' back to 0.

    Raises:
        ParameterError: If t' rounds to zero or x holds non-finite values
    """
    t_prime = params.timestep(schedule.timesteps)
    if t_prime < 1:
        raise ParameterError(
            f"t0 = {params.t0} rounds to timestep 0 at T = {schedule.timesteps}",
            "t0",
            str(params.t0),
        )
    x = ensure_finite(np.asarray(x, dtype=np.float64), "resample input")
    for _ in range(params.repeats):
        x = forward_sample(x, t_prime, rng.standard_normal(x.shape), schedule)
        x = _reverse(x, t_prime, denoiser, cond, schedule, guidance, rng, "resample")
    return x


def guided_dual_complete(
    front: np.ndarray,
    denoiser: Denoiser,
    cond: Optional[Condition],
    schedule: VarianceSchedule,
    guidance: GuidanceParams,
    rng: np.random.Generator,
    harmonization_steps: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generate the back channels of a dual sample around a known front.

    At every timestep the front channels are redrawn from the forward process of the
    known front, the back channels follow the reverse chain. Each timestep is
    repeated U times (`harmonization_steps`, defaulting to
    `guidance.harmonization_steps`), re-noising one step between repeats so the back
    settles on the conditional given the front. The returned front is the input front.

    Raises:
        ParameterError: If the front does not have 4 channels or is not finite
    """
    front = ensure_finite(np.asarray(front, dtype=np.float64), "front")
    if front.ndim < 3 or front.shape[-3] != FRONT_CHANNELS:
        raise ParameterError(
            f"Front must have {FRONT_CHANNELS} channels on axis -3, got {front.shape}",
            "front",
        )
    if harmonization_steps is None:
        harmonization_steps = guidance.harmonization_steps
    ensure_positive(harmonization_steps, "harmonization_steps")
    shape = front.shape[:-3] + (2 * FRONT_CHANNELS,) + front.shape[-2:]
    x = rng.standard_normal(shape)
    for t in tqdm(range(schedule.timesteps, 0, -1), desc="complete", leave=False):
        repeats = harmonization_steps if t > 1 else 1
        for u in range(repeats):
            x[..., :FRONT_CHANNELS, :, :] = forward_sample(
                front, t, rng.standard_normal(front.shape), schedule
            )
            eps = guided_eps(denoiser, x, t, cond, guidance.strength)
            x_prev = posterior_step(x, eps, t, schedule, _step_noise(rng, shape, t))
            if u < repeats - 1:
                x = forward_step(x_prev, t, rng.standard_normal(shape), schedule)
            else:
                x = x_prev
    x[..., :FRONT_CHANNELS, :, :] = front
    return x[..., :FRONT_CHANNELS, :, :].copy(), x[..., FRONT_CHANNELS:, :, :].copy()


class GaussianOracleDenoiser:
    """
    Bayes-optimal noise predictor for x0 ~ N(mean, covariance).

    `variance` is a scalar (isotropic) or a full (D, D) covariance over the flattened
    event shape of `mean`. Leading axes of x_t beyond the event shape are batch axes.
    The condition is ignored.
    """

    def __init__(self, schedule: VarianceSchedule, mean: np.ndarray, variance):
        self.schedule = schedule
        self.mean = np.asarray(mean, dtype=np.float64)
        variance = np.asarray(variance, dtype=np.float64)
        if variance.ndim == 0:
            ensure_positive(float(variance), "variance")
        else:
            size = self.mean.size
            if variance.shape != (size, size):
                raise ParameterError(
                    f"Covariance must be ({size}, {size}), got {variance.shape}",
                    "variance",
                )
            if np.any(np.linalg.eigvalsh(variance) <= 0):
                raise ParameterError("Covariance must be positive definite", "variance")
        self.variance = variance

    def posterior_mean(self, x_t: np.ndarray, t: int) -> np.ndarray:
        """
        E[x0 | x_t] = mean + sqrt(ab) S (ab S + (1 - ab) I)^-1 (x_t - sqrt(ab) mean)
        """
        alpha_bar = self.schedule.alpha_bar(t)
        root = np.sqrt(alpha_bar)
        residual = np.asarray(x_t, dtype=np.float64) - root * self.mean
        if self.variance.ndim == 0:
            gain = root * self.variance / (alpha_bar * self.variance + 1.0 - alpha_bar)
            return self.mean + gain * residual
        size = self.mean.size
        system = alpha_bar * self.variance + (1.0 - alpha_bar) * np.eye(size)
        rows = residual.reshape(-1, size)
        shifted = root * rows @ np.linalg.solve(system, self.variance)
        return self.mean + shifted.reshape(residual.shape)

    def predict(
        self, x_t: np.ndarray, t: int, cond: Optional[Condition] = None
    ) -> np.ndarray:
        alpha_bar = self.schedule.alpha_bar(t)
        x0 = self.posterior_mean(x_t, t)
        return (x_t - np.sqrt(alpha_bar) * x0) / np.sqrt(1.0 - alpha_bar)


def analytic_gaussian_denoiser(
    mean: np.ndarray, variance, schedule: VarianceSchedule
) -> GaussianOracleDenoiser:
    """
    Raises:
        ParameterError: If the variance is not positive (definite)
    """
    return GaussianOracleDenoiser(schedule, mean, variance)
