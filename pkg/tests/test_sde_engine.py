"""Tests for Brownian streams, projection, the implicit scheme and its exact oracles."""

import math

import numpy as np
import pytest

from stochstab.errors import TimeStepTooLargeError, ValidationError
from stochstab.operators import heat_spectrum
from stochstab.sde_engine import (
    Discretization,
    InitialKind,
    StateVector,
    brownian_increments,
    coarsen_path,
    discrete_second_moment_factor,
    discrete_second_moment_rate,
    discrete_second_moment_recursion,
    exact_mode_moment,
    exact_solution,
    exact_trajectory,
    generate_path,
    implicit_em_step,
    paper_polynomial_coefficient,
    project_initial_condition,
    simulate_path,
    standard_normals,
    step_denominators,
    step_factors,
    strong_error_study,
    trajectory_frame,
)
from stochstab.stability import ModelParams, moment_decay_rate

from conftest import PI2, PI4, single_mode


class TestDiscretization:
    def test_exact_division(self):
        disc = Discretization(n_modes=4, tau=1e-3, horizon=0.2)
        assert disc.n_steps == 200
        assert disc.effective_horizon == pytest.approx(0.2)

    def test_rounds_up_partial_step(self):
        disc = Discretization(n_modes=1, tau=0.3, horizon=1.0)
        assert disc.n_steps == 4
        assert disc.effective_horizon == pytest.approx(1.2)

    def test_zero_horizon(self):
        disc = Discretization(n_modes=1, tau=0.1, horizon=0.0)
        assert disc.n_steps == 0
        np.testing.assert_array_equal(disc.recorded_steps(), [0])

    def test_recorded_steps_with_stride(self):
        disc = Discretization(n_modes=1, tau=0.1, horizon=1.0)
        np.testing.assert_array_equal(disc.recorded_steps(3), [0, 3, 6, 9])
        with pytest.raises(ValidationError):
            disc.recorded_steps(0)


class TestStepFactors:
    def test_biharmonic_step_example(self, biharmonic1):
        params = ModelParams(beta0=1.0, beta1=2.0)
        assert step_factors(params, biharmonic1, 1e-3)[0] == pytest.approx(0.912068, abs=1e-6)
        assert discrete_second_moment_factor(params, PI4, 1e-3) == pytest.approx(0.8351961, abs=1e-6)

    def test_too_large_step_names_mode(self):
        params = ModelParams(beta0=1000.0, beta1=0.0)
        with pytest.raises(TimeStepTooLargeError, match="time step too large") as info:
            step_denominators(params, heat_spectrum(3), 0.01)
        assert info.value.mode == 1
        assert info.value.tau == 0.01

    def test_too_large_step_is_validation_error(self):
        with pytest.raises(ValidationError):
            discrete_second_moment_factor(ModelParams(beta0=50.0, beta1=0.0), PI2, 0.1)


class TestBrownian:
    def test_same_key_same_draws(self):
        np.testing.assert_array_equal(standard_normals(7, 3, 100), standard_normals(7, 3, 100))

    def test_prefix_property(self):
        np.testing.assert_array_equal(standard_normals(7, 0, 50), standard_normals(7, 0, 200)[:50])

    def test_streams_differ(self):
        assert not np.array_equal(standard_normals(7, 0, 10), standard_normals(7, 1, 10))
        assert not np.array_equal(standard_normals(7, 0, 10), standard_normals(8, 0, 10))

    def test_standard_normal_moments(self):
        draws = standard_normals(123, 0, 200_000)
        assert abs(draws.mean()) < 0.01
        assert draws.var() == pytest.approx(1.0, abs=0.01)
        assert np.all(np.isfinite(draws))

    @pytest.mark.parametrize("seed", [-1, 2**64, True])
    def test_rejects_bad_seed(self, seed):
        with pytest.raises(ValidationError):
            standard_normals(seed, 0, 4)

    def test_increment_variance_scales_with_tau(self):
        path = brownian_increments(5, 0, 100_000, 0.01)
        assert path.increments.var() == pytest.approx(0.01, rel=0.02)

    def test_cumulative(self):
        path = generate_path(11, Discretization(n_modes=1, tau=0.01, horizon=1.0))
        assert path.n_steps == 100
        cumulative = path.cumulative
        assert cumulative[0] == 0.0
        assert cumulative[-1] == pytest.approx(path.increments.sum(), abs=1e-12)
        np.testing.assert_allclose(np.diff(cumulative), path.increments, atol=1e-12)

    def test_coarsen_keeps_endpoint(self):
        fine = brownian_increments(3, 0, 64, 2.0 ** -6)
        coarse = coarsen_path(fine, 4)
        assert coarse.n_steps == 16
        assert coarse.tau == 2.0 ** -4
        assert coarse.cumulative[-1] == pytest.approx(fine.cumulative[-1], abs=1e-12)

    def test_coarsen_rejects_ragged_factor(self):
        with pytest.raises(ValidationError):
            coarsen_path(brownian_increments(3, 0, 10, 0.1), 3)


class TestProjection:
    def test_polynomial_first_coefficient(self):
        assert paper_polynomial_coefficient(1) == pytest.approx(0.2218238, abs=1e-7)
        assert paper_polynomial_coefficient(2) == 0.0

    def test_projection_matches_closed_form(self):
        state = project_initial_condition(InitialKind.PAPER_POLYNOMIAL, 9)
        expected = [paper_polynomial_coefficient(k) for k in range(1, 10)]
        np.testing.assert_allclose(state.coeffs, expected, atol=1e-12)

    def test_custom_samples_of_first_eigenfunction(self):
        x = np.linspace(0.0, 1.0, 2001)
        state = project_initial_condition("custom", 4, np.sin(np.pi * x) / math.sqrt(2.0))
        np.testing.assert_allclose(state.coeffs, [0.5, 0.0, 0.0, 0.0], atol=1e-8)

    def test_custom_needs_samples(self):
        with pytest.raises(ValidationError):
            project_initial_condition(InitialKind.CUSTOM, 3)
        with pytest.raises(ValidationError):
            project_initial_condition(InitialKind.CUSTOM, 3, [0.0, 1.0, 0.0])

    def test_state_vector_validation(self):
        with pytest.raises(ValidationError):
            StateVector([])
        assert StateVector([3.0, 4.0]).norm_sq == 25.0


class TestScheme:
    def test_zero_state_stays_zero(self, heat1):
        state = implicit_em_step(StateVector([0.0]), 0.3, ModelParams(beta0=1.0, beta1=5.0), heat1, 0.01)
        assert state.coeffs[0] == 0.0

    def test_single_step_formula(self, heat1):
        params = ModelParams(beta0=1.0, beta1=2.0)
        state = implicit_em_step(StateVector([1.0]), 0.1, params, heat1, 0.01)
        assert state.coeffs[0] == pytest.approx(1.2 / (1.0 + 0.01 * (PI2 - 1.0)), rel=1e-14)

    def test_mode_mismatch_rejected(self, heat1):
        with pytest.raises(ValidationError):
            implicit_em_step(StateVector([1.0, 2.0]), 0.0, ModelParams(beta0=0.0, beta1=0.0), heat1, 0.01)

    def test_deterministic_limit(self, heat1):
        params = ModelParams(beta0=0.0, beta1=0.0)
        disc = Discretization(n_modes=1, tau=0.01, horizon=0.5)
        trajectory = simulate_path(StateVector([1.0]), params, heat1, disc, generate_path(1, disc))
        t_n, state = trajectory[-1]
        assert t_n == pytest.approx(0.5)
        assert state.coeffs[0] == pytest.approx((1.0 + 0.01 * PI2) ** -50, rel=1e-12)

    def test_homogeneous_in_initial_state(self):
        spectrum = heat_spectrum(3)
        params = ModelParams(beta0=2.0, beta1=1.5)
        disc = Discretization(n_modes=3, tau=1e-3, horizon=0.1)
        path = generate_path(9, disc, path_index=2)
        y0 = StateVector([0.3, -0.1, 0.05])
        single = simulate_path(y0, params, spectrum, disc, path)
        double = simulate_path(y0.scaled(2.0), params, spectrum, disc, path)
        for (_, a), (_, b) in zip(single, double):
            np.testing.assert_array_equal(b.coeffs, 2.0 * a.coeffs)

    def test_modes_are_decoupled(self):
        params = ModelParams(beta0=1.0, beta1=0.7)
        disc3 = Discretization(n_modes=3, tau=1e-3, horizon=0.05)
        disc1 = Discretization(n_modes=1, tau=1e-3, horizon=0.05)
        path = generate_path(4, disc3)
        full = simulate_path(StateVector([1.0, 0.5, 0.25]), params, heat_spectrum(3), disc3, path)
        second = simulate_path(StateVector([0.5]), params, single_mode(4.0 * PI2), disc1, path)
        np.testing.assert_array_equal([s.coeffs[1] for _, s in full], [s.coeffs[0] for _, s in second])

    def test_short_path_rejected(self, heat1):
        disc = Discretization(n_modes=1, tau=0.01, horizon=1.0)
        path = brownian_increments(1, 0, 10, 0.01)
        with pytest.raises(ValidationError):
            simulate_path(StateVector([1.0]), ModelParams(beta0=0.0, beta1=0.0), heat1, disc, path)

    def test_trajectory_frame_columns(self):
        spectrum = heat_spectrum(2)
        disc = Discretization(n_modes=2, tau=0.1, horizon=0.3)
        trajectory = simulate_path(StateVector([1.0, 1.0]), ModelParams(beta0=0.0, beta1=1.0), spectrum, disc, generate_path(2, disc))
        assert list(trajectory_frame(trajectory).columns) == ["t", "norm_sq"]
        frame = trajectory_frame(trajectory, include_coeffs=True)
        assert list(frame.columns) == ["t", "norm_sq", "Y_1", "Y_2"]
        assert len(frame) == 4
        np.testing.assert_allclose(frame["norm_sq"], frame["Y_1"] ** 2 + frame["Y_2"] ** 2)


class TestExactOracles:
    def test_exact_solution_at_zero(self):
        y0 = StateVector([0.2, -0.4])
        state = exact_solution(y0, ModelParams(beta0=3.0, beta1=2.0), heat_spectrum(2), 0.0, 0.0)
        np.testing.assert_array_equal(state.coeffs, y0.coeffs)

    def test_exact_solution_formula(self, heat1):
        params = ModelParams(beta0=1.0, beta1=2.0)
        state = exact_solution(StateVector([1.0]), params, heat1, 0.5, 0.3)
        expected = math.exp(-(PI2 - 1.0) * 0.5) * math.exp(2.0 * 0.3 - 2.0 * 0.5)
        assert state.coeffs[0] == pytest.approx(expected, rel=1e-13)

    def test_exact_trajectory_shape(self):
        values = exact_trajectory(StateVector([1.0, 2.0, 3.0]), ModelParams(beta0=0.0, beta1=1.0), heat_spectrum(3), np.linspace(0, 1, 5), np.zeros(5))
        assert values.shape == (5, 3)

    def test_negative_time_rejected(self, heat1):
        with pytest.raises(ValidationError):
            exact_solution(StateVector([1.0]), ModelParams(beta0=0.0, beta1=0.0), heat1, -0.1, 0.0)

    def test_mode_moment_decays_at_mu_p(self):
        params = ModelParams(beta0=1.0, beta1=2.0, p=2.0)
        ratio = exact_mode_moment(1.0, params, PI4, 0.01) / exact_mode_moment(1.0, params, PI4, 0.0)
        assert -math.log(ratio) / 0.01 == pytest.approx(moment_decay_rate(params, PI4), rel=1e-10)

    def test_discrete_recursion(self):
        params = ModelParams(beta0=1.0, beta1=2.0)
        factor = discrete_second_moment_factor(params, PI4, 1e-3)
        assert discrete_second_moment_recursion(0.5, params, PI4, 1e-3, 0) == 0.25
        assert discrete_second_moment_recursion(0.5, params, PI4, 1e-3, 3) == pytest.approx(0.25 * factor ** 3)
        with pytest.raises(ValidationError):
            discrete_second_moment_recursion(0.5, ModelParams(beta0=1.0, beta1=2.0, p=3.0), PI4, 1e-3, 3)

    def test_discrete_rate_approaches_mu_2(self):
        params = ModelParams(beta0=1.0, beta1=2.0)
        mu = moment_decay_rate(params, PI4)
        gaps = [abs(discrete_second_moment_rate(params, PI4, tau) - mu) for tau in (1e-3, 5e-4, 2.5e-4, 1.25e-4, 6.25e-5)]
        assert all(later < earlier for earlier, later in zip(gaps, gaps[1:]))
        assert gaps[-1] / mu < 0.05


class TestStrongConvergence:
    def test_order_near_one_half(self, heat1):
        table, order = strong_error_study(
            StateVector([1.0]),
            ModelParams(beta0=1.0, beta1=1.0),
            heat1,
            horizon=1.0,
            taus=[2.0 ** -8, 2.0 ** -9, 2.0 ** -10, 2.0 ** -11],
            n_paths=16,
            master_seed=7,
        )
        assert list(table.columns) == ["tau", "error"]
        assert table["tau"].tolist() == sorted(table["tau"].tolist())
        assert order >= 0.4
        assert table["error"].iloc[0] < table["error"].iloc[-1]

    def test_rejects_incommensurate_steps(self, heat1):
        with pytest.raises(ValidationError):
            strong_error_study(StateVector([1.0]), ModelParams(beta0=0.0, beta1=1.0), heat1, 1.0, [0.01, 0.015], 2, 7)

    def test_needs_two_levels(self, heat1):
        with pytest.raises(ValidationError):
            strong_error_study(StateVector([1.0]), ModelParams(beta0=0.0, beta1=1.0), heat1, 1.0, [0.01], 2, 7)
