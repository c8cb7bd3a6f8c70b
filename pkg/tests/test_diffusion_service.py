import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app.core.exceptions import ParameterError
from app.models.diffusion import Condition, VarianceSchedule
from app.models.normal_map import unpack_dual
from app.schemas.diffusion import GuidanceParams, ResampleParams, ScheduleParams
from app.services.diffusion_service import (
    analytic_gaussian_denoiser,
    cfg_combine,
    forward_sample,
    forward_step,
    guided_dual_complete,
    guided_eps,
    linear_schedule,
    posterior_step,
    resample,
    sample,
    sample_separate,
    schedule_from_params,
)
from app.services.raster_service import mirror_iou

SHORT_SCHEDULE = linear_schedule(10, 0.01, 0.2)


class ZeroRng:
    """Generator stand-in whose every normal draw is zero."""

    def standard_normal(self, shape):
        return np.zeros(shape)


class CountingDenoiser:
    def __init__(self):
        self.calls = []

    def predict(self, x_t, t, cond):
        self.calls.append(cond)
        if cond is None or cond.blank:
            return np.zeros_like(x_t)
        return np.ones_like(x_t)


NO_GUIDANCE = GuidanceParams(strength=1.0)


class TestSchedule:
    def test_default_range_scales_with_length(self):
        schedule = linear_schedule(100)
        assert schedule.timesteps == 100
        assert schedule.beta(1) == pytest.approx(1e-3)
        assert schedule.beta(100) == pytest.approx(0.2)
        assert schedule.alpha_bar(100) < 1e-3

    def test_alpha_bar_is_running_product(self):
        schedule = linear_schedule(10, 0.01, 0.1)
        expected = np.prod(1.0 - np.linspace(0.01, 0.1, 10)[:3])
        assert schedule.alpha_bar(3) == pytest.approx(expected)
        assert schedule.alpha(1) == pytest.approx(0.99)

    def test_single_step(self):
        assert linear_schedule(1, 0.1, 0.2).betas.tolist() == [0.1]

    @pytest.mark.parametrize("start,end", [(0.2, 0.1), (0.0, 0.1), (0.1, 1.0)])
    def test_invalid_betas(self, start, end):
        with pytest.raises(ParameterError):
            linear_schedule(10, start, end)

    def test_zero_timesteps(self):
        with pytest.raises(ParameterError):
            linear_schedule(0)

    @pytest.mark.parametrize("t", [0, 11])
    def test_timestep_range(self, t):
        with pytest.raises(ParameterError):
            linear_schedule(10, 0.01, 0.2).beta(t)

    def test_non_increasing_betas(self):
        with pytest.raises(ParameterError):
            VarianceSchedule(np.array([0.1, 0.1]))

    def test_from_params(self):
        schedule = schedule_from_params(ScheduleParams(timesteps=20))
        assert schedule.timesteps == 20


class TestForwardProcess:
    def test_closed_form(self):
        schedule = linear_schedule(10, 0.01, 0.2)
        x0 = np.full((4, 2, 2), 0.5)
        noise = np.ones_like(x0)
        ab = schedule.alpha_bar(4)
        expected = np.sqrt(ab) * 0.5 + np.sqrt(1.0 - ab)
        np.testing.assert_allclose(forward_sample(x0, 4, noise, schedule), expected)

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            forward_sample(np.zeros((4, 2, 2)), 1, np.zeros((4, 2, 3)), SHORT_SCHEDULE)

    def test_closed_form_matches_stepwise_chain(self):
        n = 20000
        rng = np.random.default_rng(8)
        x = np.full(n, 0.7)
        for t in range(1, 6):
            x = forward_step(x, t, rng.standard_normal(n), SHORT_SCHEDULE)
        noise = rng.standard_normal(n)
        closed = forward_sample(np.full(n, 0.7), 5, noise, SHORT_SCHEDULE)
        alpha_bar = SHORT_SCHEDULE.alpha_bar(5)
        standard_error = np.sqrt((1.0 - alpha_bar) / n)
        for draws in (x, closed):
            assert draws.mean() == pytest.approx(
                np.sqrt(alpha_bar) * 0.7, abs=3 * standard_error
            )
            assert draws.var() == pytest.approx(1.0 - alpha_bar, rel=0.05)

    @pytest.mark.parametrize("t", [2, 5, 10])
    def test_noiseless_step_is_posterior_mean(self, t):
        rng = np.random.default_rng(t)
        x0 = rng.standard_normal((4, 3, 3))
        eps = rng.standard_normal(x0.shape)
        x_t = forward_sample(x0, t, eps, SHORT_SCHEDULE)
        previous = posterior_step(x_t, eps, t, SHORT_SCHEDULE, np.zeros_like(x0))
        beta = SHORT_SCHEDULE.beta(t)
        alpha_bar = SHORT_SCHEDULE.alpha_bar(t)
        alpha_bar_prev = SHORT_SCHEDULE.alpha_bar(t - 1)
        expected = (
            np.sqrt(alpha_bar_prev) * beta / (1.0 - alpha_bar) * x0
            + np.sqrt(SHORT_SCHEDULE.alpha(t)) * (1.0 - alpha_bar_prev)
            / (1.0 - alpha_bar) * x_t
        )
        np.testing.assert_allclose(previous, expected, atol=1e-10)

    def test_first_step_recovers_data(self):
        x0 = np.linspace(-1.0, 1.0, 8)
        eps = np.cos(np.arange(8.0))
        x_1 = forward_sample(x0, 1, eps, SHORT_SCHEDULE)
        previous = posterior_step(x_1, eps, 1, SHORT_SCHEDULE, np.zeros(8))
        np.testing.assert_allclose(previous, x0, atol=1e-10)

    def test_noise_enters_with_beta_scale(self):
        x_t = np.zeros(3)
        noise = np.array([1.0, -2.0, 0.5])
        step = posterior_step(x_t, np.zeros(3), 4, SHORT_SCHEDULE, noise)
        np.testing.assert_allclose(step, np.sqrt(SHORT_SCHEDULE.beta(4)) * noise)


class TestGuidance:
    @given(st.floats(-4.0, 4.0))
    def test_cfg_is_affine(self, strength):
        cond = np.full((2, 2), 3.0)
        uncond = np.full((2, 2), -1.0)
        expected = strength * 3.0 + (1.0 - strength) * -1.0
        np.testing.assert_allclose(cfg_combine(cond, uncond, strength), expected)

    def test_strength_one_is_a_single_call(self):
        denoiser = CountingDenoiser()
        cond = Condition.of(np.zeros((4, 2, 2)))
        eps = guided_eps(denoiser, np.zeros((8, 2, 2)), 1, cond, 1.0)
        assert len(denoiser.calls) == 1
        np.testing.assert_array_equal(eps, 1.0)

    def test_guided_mix(self):
        denoiser = CountingDenoiser()
        cond = Condition.of(np.zeros((4, 2, 2)))
        eps = guided_eps(denoiser, np.zeros((8, 2, 2)), 1, cond, 2.0)
        assert [c.blank for c in denoiser.calls] == [False, True]
        np.testing.assert_array_equal(eps, 2.0)

    def test_unconditional(self):
        denoiser = CountingDenoiser()
        guided_eps(denoiser, np.zeros((8, 2, 2)), 1, None, 2.0)
        assert denoiser.calls == [None]

    @pytest.mark.parametrize("strength,per_step", [(1.0, 1), (2.0, 2)])
    def test_calls_over_a_full_chain(self, strength, per_step):
        denoiser = CountingDenoiser()
        cond = Condition.of(np.zeros((4, 2, 2)))
        guidance = GuidanceParams(strength=strength)
        sample(denoiser, cond, SHORT_SCHEDULE, guidance, (8, 2, 2), ZeroRng())
        assert len(denoiser.calls) == per_step * SHORT_SCHEDULE.timesteps

    def test_strength_changes_the_sample(self):
        cond = Condition.of(np.zeros((4, 2, 2)))
        outputs = [
            sample(
                CountingDenoiser(),
                cond,
                SHORT_SCHEDULE,
                GuidanceParams(strength=strength),
                (8, 2, 2),
                ZeroRng(),
            )
            for strength in (1.0, 2.0, 4.0)
        ]
        for i in range(3):
            for j in range(i + 1, 3):
                assert not np.allclose(outputs[i], outputs[j])


class TestGaussianOracle:
    def test_rejects_non_positive_variance(self):
        with pytest.raises(ParameterError):
            analytic_gaussian_denoiser(np.zeros(2), 0.0, SHORT_SCHEDULE)

    def test_rejects_indefinite_covariance(self):
        covariance = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(ParameterError):
            analytic_gaussian_denoiser(np.zeros(2), covariance, SHORT_SCHEDULE)

    def test_full_covariance_matches_isotropic(self):
        schedule = linear_schedule(10, 0.01, 0.2)
        mean = np.zeros((1, 2, 2))
        x_t = np.arange(4.0).reshape(1, 2, 2)
        isotropic = analytic_gaussian_denoiser(mean, 0.5, schedule)
        full = analytic_gaussian_denoiser(mean, 0.5 * np.eye(4), schedule)
        np.testing.assert_allclose(full.predict(x_t, 5), isotropic.predict(x_t, 5))

    def test_sample_moments(self):
        schedule = linear_schedule(100)
        denoiser = analytic_gaussian_denoiser(0.5, 1.0, schedule)
        rng = np.random.default_rng(0)
        x = sample(denoiser, None, schedule, NO_GUIDANCE, (200, 4, 4, 4), rng)
        n = x.size
        assert x.mean() == pytest.approx(0.5, abs=3 * np.sqrt(1.0 / n))
        assert x.var() == pytest.approx(1.0, abs=3 * np.sqrt(2.0 / n))

    def test_noiseless_sample_reaches_mean(self):
        schedule = linear_schedule(50)
        mean = np.linspace(-0.5, 0.5, 16).reshape(1, 4, 4)
        denoiser = analytic_gaussian_denoiser(mean, 1.0, schedule)
        x = sample(denoiser, None, schedule, NO_GUIDANCE, (1, 4, 4), ZeroRng())
        np.testing.assert_allclose(x, mean, atol=1e-3)


class TestResample:
    def test_timestep_rounds_half_up(self):
        assert ResampleParams(t0=0.02).timestep(100) == 2
        assert ResampleParams(t0=0.025).timestep(100) == 3

    def test_rejects_zero_timestep(self):
        schedule = linear_schedule(100)
        denoiser = analytic_gaussian_denoiser(0.0, 1.0, schedule)
        with pytest.raises(ParameterError):
            resample(
                np.zeros((8, 2, 2)),
                denoiser,
                None,
                ResampleParams(t0=0.004),
                schedule,
                NO_GUIDANCE,
                np.random.default_rng(0),
            )

    def test_fixed_point_of_noiseless_chain(self):
        schedule = linear_schedule(20, 0.01, 0.2)
        mean = np.linspace(-0.5, 0.5, 32).reshape(8, 2, 2)
        denoiser = analytic_gaussian_denoiser(mean, 1.0, schedule)
        refined = resample(
            mean, denoiser, None, ResampleParams(t0=0.5, repeats=2), schedule,
            NO_GUIDANCE, ZeroRng(),
        )
        np.testing.assert_allclose(refined, mean, atol=1e-9)

    def test_deterministic_for_a_seed(self):
        schedule = linear_schedule(20, 0.01, 0.2)
        denoiser = analytic_gaussian_denoiser(0.0, 1.0, schedule)
        x = np.zeros((8, 2, 2))
        params = ResampleParams(t0=0.25, repeats=1)
        first = resample(x, denoiser, None, params, schedule, NO_GUIDANCE,
                         np.random.default_rng(5))
        second = resample(x, denoiser, None, params, schedule, NO_GUIDANCE,
                          np.random.default_rng(5))
        np.testing.assert_array_equal(first, second)

    def test_contracts_toward_data_mean(self):
        schedule = linear_schedule(100)
        denoiser = analytic_gaussian_denoiser(0.3, 1.0, schedule)
        params = ResampleParams(t0=0.02, repeats=2)
        start = np.full((2000, 8), 3.0)
        # each pass pulls the expected value in by alpha_bar at t' = 2
        expected = 0.3 + schedule.alpha_bar(2) ** 2 * 2.7
        noiseless = resample(
            start[:1], denoiser, None, params, schedule, NO_GUIDANCE, ZeroRng()
        )
        np.testing.assert_allclose(noiseless, expected, rtol=1e-9)
        assert 0.3 < expected < 3.0
        refined = resample(
            start, denoiser, None, params, schedule, NO_GUIDANCE,
            np.random.default_rng(4),
        )
        standard_error = refined.std() / np.sqrt(refined.size)
        assert refined.mean() == pytest.approx(expected, abs=4 * standard_error)

    def test_rejects_non_finite_input(self):
        schedule = linear_schedule(20, 0.01, 0.2)
        denoiser = analytic_gaussian_denoiser(0.0, 1.0, schedule)
        x = np.zeros((8, 2, 2))
        x[0, 0, 0] = np.nan
        with pytest.raises(ParameterError):
            resample(
                x, denoiser, None, ResampleParams(t0=0.25), schedule, NO_GUIDANCE,
                np.random.default_rng(0),
            )


class TestDualSampling:
    def test_separate_takes_back_from_second_chain(self):
        schedule = linear_schedule(10, 0.01, 0.2)
        denoiser = analytic_gaussian_denoiser(0.0, 1.0, schedule)
        shape = (8, 2, 2)
        separate = sample_separate(
            denoiser, None, schedule, NO_GUIDANCE, shape, np.random.default_rng(1)
        )
        rng = np.random.default_rng(1)
        first = sample(denoiser, None, schedule, NO_GUIDANCE, shape, rng)
        second = sample(denoiser, None, schedule, NO_GUIDANCE, shape, rng)
        np.testing.assert_array_equal(separate[:4], first[:4])
        np.testing.assert_array_equal(separate[4:], second[4:])

    def test_dual_chain_keeps_mirrored_silhouettes_together(self):
        # front alpha at column j correlates with back alpha at the mirrored column
        schedule = linear_schedule(50)
        width = 8
        covariance = np.eye(8 * width)
        for j in range(width):
            front_alpha = 3 * width + j
            back_alpha = 7 * width + (width - 1 - j)
            covariance[front_alpha, back_alpha] = 0.95
            covariance[back_alpha, front_alpha] = 0.95
        denoiser = analytic_gaussian_denoiser(
            np.zeros((8, 1, width)), covariance, schedule
        )
        shape = (200, 8, 1, width)
        dual = sample(
            denoiser, None, schedule, NO_GUIDANCE, shape, np.random.default_rng(6)
        )
        separate = sample_separate(
            denoiser, None, schedule, NO_GUIDANCE, shape, np.random.default_rng(6)
        )

        def mean_mirror_iou(batch):
            return np.mean([mirror_iou(*unpack_dual(s)) for s in batch])

        dual_iou = mean_mirror_iou(dual)
        separate_iou = mean_mirror_iou(separate)
        assert dual_iou > 0.7
        assert separate_iou < 0.5
        assert dual_iou > separate_iou

    def test_completion_rejects_non_finite_front(self):
        schedule = linear_schedule(10, 0.01, 0.2)
        denoiser = analytic_gaussian_denoiser(0.0, 1.0, schedule)
        front = np.zeros((4, 2, 2))
        front[1] = np.inf
        with pytest.raises(ParameterError):
            guided_dual_complete(
                front, denoiser, None, schedule, NO_GUIDANCE, np.random.default_rng(0)
            )

    def test_completion_returns_input_front(self):
        schedule = linear_schedule(10, 0.01, 0.2)
        denoiser = analytic_gaussian_denoiser(0.0, 1.0, schedule)
        front = np.random.default_rng(2).uniform(-1, 1, (4, 4, 4))
        completed_front, back = guided_dual_complete(
            front, denoiser, None, schedule, NO_GUIDANCE, np.random.default_rng(3)
        )
        np.testing.assert_array_equal(completed_front, front)
        assert back.shape == (4, 4, 4)

    @pytest.mark.parametrize("harmonization_steps", [1, 3])
    def test_completion_expectation(self, harmonization_steps):
        schedule = linear_schedule(50)
        mean = np.zeros((8, 4, 4))
        mean[4:] = 0.3
        denoiser = analytic_gaussian_denoiser(mean, 1.0, schedule)
        _, back = guided_dual_complete(
            np.zeros((4, 4, 4)),
            denoiser,
            None,
            schedule,
            NO_GUIDANCE,
            ZeroRng(),
            harmonization_steps=harmonization_steps,
        )
        np.testing.assert_allclose(back, 0.3, atol=1e-3)

    def test_completion_needs_four_channels(self):
        schedule = linear_schedule(10, 0.01, 0.2)
        denoiser = analytic_gaussian_denoiser(0.0, 1.0, schedule)
        with pytest.raises(ParameterError):
            guided_dual_complete(
                np.zeros((3, 4, 4)), denoiser, None, schedule, NO_GUIDANCE,
                np.random.default_rng(0),
            )

    def test_default_repeats_come_from_guidance(self):
        schedule = linear_schedule(10, 0.01, 0.2)
        denoiser = CountingDenoiser()
        guidance = GuidanceParams(strength=1.0, harmonization_steps=4)
        guided_dual_complete(
            np.zeros((4, 2, 2)), denoiser, None, schedule, guidance,
            np.random.default_rng(0),
        )
        # four repeats at t = 10..2, one at t = 1
        assert len(denoiser.calls) == 9 * 4 + 1

    def test_rejects_zero_repeats(self):
        schedule = linear_schedule(10, 0.01, 0.2)
        denoiser = analytic_gaussian_denoiser(0.0, 1.0, schedule)
        with pytest.raises(ParameterError):
            guided_dual_complete(
                np.zeros((4, 2, 2)), denoiser, None, schedule, NO_GUIDANCE,
                np.random.default_rng(0), harmonization_steps=0,
            )

    def test_completion_matches_correlated_conditional(self):
        # front channel 0 and back channel 4 correlate at 0.8; given a front value
        # of 1 the back channel follows N(0.8, 0.36)
        schedule = linear_schedule(100)
        covariance = np.eye(8)
        covariance[0, 4] = covariance[4, 0] = 0.8
        denoiser = analytic_gaussian_denoiser(np.zeros((8, 1, 1)), covariance, schedule)
        n = 1000
        front = np.zeros((n, 4, 1, 1))
        front[:, 0] = 1.0
        _, back = guided_dual_complete(
            front, denoiser, None, schedule, NO_GUIDANCE, np.random.default_rng(11)
        )
        correlated = back[:, 0, 0, 0]
        standard_error = np.sqrt(0.36 / n)
        assert correlated.mean() == pytest.approx(0.8, abs=3 * standard_error)
        assert correlated.var() == pytest.approx(0.36, rel=0.15)
        independent = back[:, 1:, 0, 0]
        np.testing.assert_allclose(
            independent.mean(axis=0), 0.0, atol=3 * np.sqrt(1.0 / n)
        )
        np.testing.assert_allclose(independent.var(axis=0), 1.0, rtol=0.15)
