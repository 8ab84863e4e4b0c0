"""Tests for the ensemble runner, moment fits and pathwise exponents."""

import math

import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError

from stochstab.errors import EstimationError, TimeStepTooLargeError, ValidationError
from stochstab.montecarlo import (
    EnsembleConfig,
    EnsembleRunner,
    MomentSeries,
    clamp_underflow,
    discrete_second_moment_series,
    exact_pathwise_exponents,
    fit_decay_rate,
    pathwise_exponent,
    run_ensemble,
)
from stochstab.operators import heat_spectrum
from stochstab.sde_engine import Discretization, StateVector, generate_path, simulate_path
from stochstab.stability import ModelParams, as_decay_rate

from conftest import PI2, PI4, single_mode


def _series(times, values):
    times = np.asarray(times, dtype=float)
    return MomentSeries(times=times, values=np.asarray(values, dtype=float), stderr=np.zeros(times.size), n_paths=1, p=2.0)


class TestEnsemble:
    def test_matches_exact_discrete_law(self, unit_state):
        """Every Monte Carlo point lies within four standard errors of the exact scheme moment."""
        spectrum = single_mode(PI4)
        params = ModelParams(beta0=1.0, beta1=2.0, p=2.0)
        disc = Discretization(n_modes=1, tau=1e-3, horizon=0.1)
        series = run_ensemble(unit_state, params, spectrum, disc, EnsembleConfig(n_paths=2000, master_seed=7))
        exact = discrete_second_moment_series(unit_state, params, spectrum, disc)

        assert series.values.size == disc.n_steps + 1
        assert series.values[0] == 1.0
        positive = series.times > 0.0
        z = np.abs(series.values[positive] - exact.values[positive]) / series.stderr[positive]
        assert np.all(z <= 4.0)

    def test_worker_count_does_not_change_bits(self, unit_state):
        spectrum = heat_spectrum(1)
        params = ModelParams(beta0=1.0, beta1=1.5, p=2.0)
        disc = Discretization(n_modes=1, tau=1e-3, horizon=0.02)
        cfg = EnsembleConfig(n_paths=600, master_seed=11)
        serial = EnsembleRunner(workers=1).run_ensemble(unit_state, params, spectrum, disc, cfg)
        threaded = EnsembleRunner(workers=4).run_ensemble(unit_state, params, spectrum, disc, cfg)
        np.testing.assert_array_equal(serial.values, threaded.values)
        np.testing.assert_array_equal(serial.stderr, threaded.stderr)

    def test_stderr_shrinks_like_inverse_sqrt(self, unit_state):
        spectrum = heat_spectrum(1)
        params = ModelParams(beta0=0.0, beta1=1.0, p=2.0)
        disc = Discretization(n_modes=1, tau=1e-3, horizon=0.05)
        small = run_ensemble(unit_state, params, spectrum, disc, EnsembleConfig(n_paths=4000))
        large = run_ensemble(unit_state, params, spectrum, disc, EnsembleConfig(n_paths=8000))
        ratio = large.stderr[-1] / small.stderr[-1]
        assert ratio == pytest.approx(1.0 / math.sqrt(2.0), rel=0.1)

    def test_orders_share_paths(self, unit_state):
        spectrum = heat_spectrum(2)
        params = ModelParams(beta0=1.0, beta1=3.0)
        disc = Discretization(n_modes=2, tau=1e-3, horizon=0.05)
        moments = EnsembleRunner().run_ensemble_orders(
            StateVector([1.0, 0.5]), params, spectrum, disc, EnsembleConfig(n_paths=300), [1.0, 2.0]
        )
        assert set(moments) == {1.0, 2.0}
        # Jensen on the same sample: (mean ||Y||)^2 <= mean ||Y||^2
        assert np.all(moments[1.0].values ** 2 <= moments[2.0].values * (1.0 + 1e-12))

    def test_normalized_series_starts_at_one(self):
        disc = Discretization(n_modes=1, tau=1e-3, horizon=0.01)
        cfg = EnsembleConfig(n_paths=50, normalize=True)
        series = run_ensemble(StateVector([0.3]), ModelParams(beta0=0.0, beta1=1.0, p=3.0), heat_spectrum(1), disc, cfg)
        assert series.values[0] == 1.0
        assert series.p == 3.0

    def test_single_path_has_zero_stderr(self, unit_state):
        disc = Discretization(n_modes=1, tau=1e-3, horizon=0.01)
        series = run_ensemble(unit_state, ModelParams(beta0=0.0, beta1=1.0), heat_spectrum(1), disc, EnsembleConfig(n_paths=1))
        np.testing.assert_array_equal(series.stderr, np.zeros(series.values.size))

    def test_stride_records_subset(self, unit_state):
        disc = Discretization(n_modes=1, tau=1e-3, horizon=0.1)
        params = ModelParams(beta0=0.0, beta1=1.0)
        every = run_ensemble(unit_state, params, heat_spectrum(1), disc, EnsembleConfig(n_paths=20))
        tenth = run_ensemble(unit_state, params, heat_spectrum(1), disc, EnsembleConfig(n_paths=20, output_stride=10))
        assert tenth.times.size == 11
        np.testing.assert_array_equal(tenth.values, every.values[::10])

    def test_rejects_large_step(self, unit_state):
        disc = Discretization(n_modes=1, tau=0.01, horizon=0.1)
        with pytest.raises(TimeStepTooLargeError):
            run_ensemble(unit_state, ModelParams(beta0=1000.0, beta1=0.0), heat_spectrum(1), disc, EnsembleConfig(n_paths=10))

    def test_rejects_bad_orders_and_modes(self, unit_state):
        disc = Discretization(n_modes=1, tau=0.01, horizon=0.1)
        runner = EnsembleRunner()
        with pytest.raises(ValidationError):
            runner.run_ensemble_orders(unit_state, ModelParams(beta0=0.0, beta1=0.0), heat_spectrum(1), disc, EnsembleConfig(n_paths=2), [0.5])
        with pytest.raises(ValidationError):
            runner.run_ensemble(unit_state, ModelParams(beta0=0.0, beta1=0.0), heat_spectrum(2), disc, EnsembleConfig(n_paths=2))

    def test_config_validation(self):
        with pytest.raises(PydanticValidationError):
            EnsembleConfig(n_paths=0)
        with pytest.raises(PydanticValidationError):
            EnsembleConfig(n_paths=1, master_seed=-1)
        with pytest.raises(ValidationError):
            EnsembleRunner(workers=0)

    def test_sample_paths_match_single_simulation(self, unit_state):
        spectrum = heat_spectrum(1)
        params = ModelParams(beta0=2.0, beta1=1.0)
        disc = Discretization(n_modes=1, tau=1e-2, horizon=0.5)
        paths = EnsembleRunner().sample_paths(unit_state, params, spectrum, disc, master_seed=5, realizations=2)
        assert len(paths) == 2
        reference = simulate_path(unit_state, params, spectrum, disc, generate_path(6, disc))
        times, norm_sq = paths[1]
        np.testing.assert_array_equal(norm_sq, [state.norm_sq for _, state in reference])
        np.testing.assert_allclose(times, [t for t, _ in reference])


class TestDiscreteSeries:
    def test_values(self):
        params = ModelParams(beta0=1.0, beta1=2.0)
        disc = Discretization(n_modes=1, tau=1e-3, horizon=0.003)
        series = discrete_second_moment_series(StateVector([2.0]), params, single_mode(PI4), disc)
        np.testing.assert_allclose(series.values, 4.0 * 0.8351961 ** np.arange(4), rtol=1e-5)
        assert series.n_paths == 0
        np.testing.assert_array_equal(series.stderr, np.zeros(4))


class TestDecayFit:
    def test_exact_exponential(self):
        t = np.linspace(0.0, 1.0, 21)
        fit = fit_decay_rate(_series(t, np.exp(-3.0 * t)))
        assert fit.rate == pytest.approx(3.0, rel=1e-10)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.stderr == pytest.approx(0.0, abs=1e-8)

    def test_explicit_window(self):
        t = np.linspace(0.0, 1.0, 101)
        values = np.where(t <= 0.5, np.exp(-2.0 * t), np.exp(-1.0 - 5.0 * (t - 0.5)))
        assert fit_decay_rate(_series(t, values), window=(0.0, 0.5)).rate == pytest.approx(2.0, rel=1e-9)
        assert fit_decay_rate(_series(t, values)).rate == pytest.approx(5.0, rel=1e-9)

    def test_constant_series(self):
        fit = fit_decay_rate(_series(np.arange(5.0), np.ones(5)))
        assert fit.rate == pytest.approx(0.0)
        assert fit.r_squared == 1.0

    def test_monte_carlo_error_propagates(self):
        t = np.linspace(0.0, 1.0, 11)
        series = MomentSeries(times=t, values=np.exp(-t), stderr=0.01 * np.exp(-t), n_paths=100, p=2.0)
        assert fit_decay_rate(series).stderr > 0.0

    def test_too_few_points(self):
        with pytest.raises(EstimationError):
            fit_decay_rate(_series([0.0, 1.0, 2.0, 3.0], [1.0, 0.5, 0.25, 0.125]), window=(2.5, 3.0))

    def test_zero_value_in_window(self):
        with pytest.raises(EstimationError):
            fit_decay_rate(_series([0.0, 1.0, 2.0, 3.0], [1.0, 0.5, 0.0, 0.1]), window=(0.0, 3.0))

    def test_reversed_window(self):
        with pytest.raises(ValidationError):
            fit_decay_rate(_series([0.0, 1.0, 2.0], [1.0, 0.5, 0.25]), window=(2.0, 1.0))

    def test_series_shape_validation(self):
        with pytest.raises(ValidationError):
            MomentSeries(times=np.zeros(3), values=np.zeros(2), stderr=np.zeros(3), n_paths=1, p=2.0)


class TestPathwiseExponents:
    def test_exact_exponential_tail(self):
        t = np.array([0.0, 1.0, 2.0, 3.0])
        assert pathwise_exponent(t, np.exp(-2.0 * t)) == pytest.approx(-2.0)

    def test_tail_skips_time_zero(self):
        assert pathwise_exponent(np.array([0.0, 1.0]), np.array([1.0, math.e]), tail_fraction=0.9) == pytest.approx(1.0)

    def test_rejects_zero_norm_and_bad_fraction(self):
        with pytest.raises(EstimationError):
            pathwise_exponent(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.0, 0.0]))
        with pytest.raises(ValidationError):
            pathwise_exponent(np.array([0.0, 1.0]), np.ones(2), tail_fraction=1.0)

    def test_clamp_underflow(self):
        values, count = clamp_underflow(np.array([0.0, 1.0]))
        assert count == 1
        assert values[0] == np.finfo(float).tiny
        assert values[1] == 1.0

    def test_deterministic_exponent(self, unit_state):
        exponents, clamped = exact_pathwise_exponents(
            unit_state, ModelParams(beta0=9.0, beta1=0.0, p=2.0), heat_spectrum(1), horizon=10.0, tau=1e-2, n_paths=2, master_seed=7
        )
        np.testing.assert_allclose(exponents, -2.0 * (PI2 - 9.0), atol=1e-6)
        assert clamped == 0

    def test_exact_exponents_report_underflow(self, unit_state):
        params = ModelParams(beta0=0.0, beta1=0.0, p=2.0)
        _, clamped = exact_pathwise_exponents(unit_state, params, single_mode(PI4), 10.0, 1e-2, 2, 7)
        assert clamped > 0

    def test_noise_stabilized_exponent(self, unit_state):
        params = ModelParams(beta0=100.0, beta1=2.7, p=1.0)
        exponents, _ = exact_pathwise_exponents(unit_state, params, single_mode(PI4), 50.0, 1e-2, 32, 7)
        predicted = -as_decay_rate(params, PI4)
        assert predicted == pytest.approx(-1.0541, abs=1e-4)
        assert exponents.mean() == pytest.approx(predicted, abs=3.0 * 2.7 / math.sqrt(50.0 * 32))
        assert exponents.mean() < 0.0

    @pytest.mark.parametrize("beta1, predicted", [(0.5, 0.2659), (1.5, -0.7341)])
    def test_sharpness_signs(self, unit_state, beta1, predicted):
        params = ModelParams(beta0=97.8, beta1=beta1, p=1.0)
        exponents, _ = exact_pathwise_exponents(unit_state, params, single_mode(PI4), 100.0, 1e-2, 32, 7)
        assert math.copysign(1.0, exponents[0]) == math.copysign(1.0, predicted)
        assert exponents.mean() == pytest.approx(predicted, abs=0.15)
