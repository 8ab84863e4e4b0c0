"""Spectral Galerkin truncation stepped by the implicit Euler-Maruyama scheme.

Per mode the scheme is Y_{n+1}^k = (Y_n^k + beta1 Y_n^k dW_n) / (1 + tau (lambda_k - beta0)):
drift implicit, noise explicit. Everything lives in coefficient space in the
sine basis phi_k(x) = sqrt(2) sin(k pi x).
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.interpolate import CubicSpline
from scipy.special import ndtri
from scipy.stats import linregress

from .errors import QuadratureError, TimeStepTooLargeError, ValidationError
from .operators import EigenSpectrum
from .stability import ModelParams

logger = logging.getLogger(__name__)

QUADRATURE_TOL = 1e-12
_UNIT_53 = 2.0 ** -53


class Discretization(BaseModel):
    """Mode count N, time step tau and horizon T on the grid t_n = n tau."""

    model_config = ConfigDict(frozen=True)

    n_modes: int = Field(ge=1, description="Number of spectral modes N")
    tau: float = Field(gt=0.0, allow_inf_nan=False, description="Time step")
    horizon: float = Field(ge=0.0, allow_inf_nan=False, description="Time horizon T")

    @property
    def n_steps(self) -> int:
        """ceil(T / tau), ignoring the rounding noise of T / tau itself."""
        ratio = self.horizon / self.tau
        nearest = round(ratio)
        if abs(ratio - nearest) <= 1e-9 * max(1.0, ratio):
            return int(nearest)
        return math.ceil(ratio)

    @property
    def effective_horizon(self) -> float:
        return self.n_steps * self.tau

    def recorded_steps(self, stride: int = 1) -> np.ndarray:
        if stride < 1:
            raise ValidationError(f"stride must be >= 1, got {stride!r}")
        return np.arange(0, self.n_steps + 1, stride)


def step_denominators(params: ModelParams, spectrum: EigenSpectrum, tau: float) -> np.ndarray:
    """1 + tau (lambda_k - beta0) per mode, rejecting any non-positive entry."""
    denominators = 1.0 + tau * (spectrum.values - params.beta0)
    bad = np.flatnonzero(denominators <= 0.0)
    if bad.size:
        k = int(bad[0])
        raise TimeStepTooLargeError(k + 1, spectrum.eigenvalues[k], params.beta0, tau)
    return denominators


def step_factors(params: ModelParams, spectrum: EigenSpectrum, tau: float) -> np.ndarray:
    """a_k(tau) = 1 / (1 + tau (lambda_k - beta0))."""
    return 1.0 / step_denominators(params, spectrum, tau)


# -- Brownian paths -----------------------------------------------------------

def _check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not (0 <= seed < 2**64):
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def standard_normals(master_seed: int, path_index: int, n: int) -> np.ndarray:
    """n standard normals for stream (master_seed, path_index).

    Philox is counter based, so draw j depends only on the key and the counter j.
    Each raw 64-bit word keeps its top 53 bits, is shifted to the open interval
    (0, 1) by half an ulp and mapped through the inverse normal CDF.
    """
    master_seed = _check_seed(master_seed)
    if path_index < 0:
        raise ValidationError(f"path_index must be >= 0, got {path_index!r}")
    if n == 0:
        return np.zeros(0)

    seed_seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(int(path_index),))
    words = np.random.Philox(seed_seq).random_raw(n)
    uniforms = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _UNIT_53
    return ndtri(uniforms)


@dataclass(frozen=True)
class BrownianPath:
    seed: int
    path_index: int
    tau: float
    increments: np.ndarray

    @property
    def n_steps(self) -> int:
        return int(self.increments.size)

    @property
    def cumulative(self) -> np.ndarray:
        """W(t_0) = 0, ..., W(t_n)."""
        return np.concatenate(([0.0], np.cumsum(self.increments)))


def brownian_increments(seed: int, path_index: int, n_steps: int, tau: float) -> BrownianPath:
    if n_steps < 0:
        raise ValidationError(f"n_steps must be >= 0, got {n_steps!r}")
    increments = math.sqrt(tau) * standard_normals(seed, path_index, n_steps)
    return BrownianPath(seed=int(seed), path_index=int(path_index), tau=float(tau), increments=increments)


def generate_path(seed: int, disc: Discretization, path_index: int = 0) -> BrownianPath:
    """Seeded N(0, tau) increments covering disc.n_steps steps."""
    return brownian_increments(seed, path_index, disc.n_steps, disc.tau)


def coarsen_path(path: BrownianPath, factor: int) -> BrownianPath:
    """Sum blocks of `factor` increments: the same path seen with step factor * tau."""
    if factor < 1 or path.n_steps % factor:
        raise ValidationError(f"cannot coarsen {path.n_steps} steps by a factor of {factor}")
    increments = path.increments.reshape(-1, factor).sum(axis=1)
    return BrownianPath(seed=path.seed, path_index=path.path_index, tau=path.tau * factor, increments=increments)


# -- state and initial condition ----------------------------------------------

@dataclass(frozen=True)
class StateVector:
    """Fourier coefficients Y^1..Y^N of the Galerkin state."""

    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim != 1 or coeffs.size == 0:
            raise ValidationError("a state vector is a non-empty 1-d array of coefficients")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n_modes(self) -> int:
        return int(self.coeffs.size)

    @property
    def norm_sq(self) -> float:
        return float(squared_norms(self.coeffs))

    def scaled(self, factor: float) -> "StateVector":
        return StateVector(self.coeffs * factor)


def squared_norms(coeffs: np.ndarray) -> np.ndarray:
    """Sum of squared coefficients over the last axis (Parseval at the truncated level)."""
    return np.sum(coeffs * coeffs, axis=-1)


class InitialKind(str, Enum):
    PAPER_POLYNOMIAL = "paper_polynomial"
    CUSTOM = "custom"


def paper_polynomial(x: np.ndarray) -> np.ndarray:
    """y0(x) = x^4 - 2x^3 + x, the hinged beam profile used by the experiments."""
    return x ** 4 - 2.0 * x ** 3 + x


def paper_polynomial_coefficient(k: int) -> float:
    """Closed-form <y0, phi_k>: 48 sqrt(2) / (k pi)^5 for odd k, 0 for even k."""
    if k < 1:
        raise ValidationError(f"mode index must be >= 1, got {k!r}")
    if k % 2 == 0:
        return 0.0
    return 48.0 * math.sqrt(2.0) / (k * math.pi) ** 5


def _gauss_legendre_sine_coefficients(
    func: Callable[[np.ndarray], np.ndarray],
    n_modes: int,
    edges: np.ndarray,
    nodes_per_panel: int,
) -> np.ndarray:
    x_ref, w_ref = np.polynomial.legendre.leggauss(nodes_per_panel)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * x_ref[None, :]).ravel()
    w = (half[:, None] * w_ref[None, :]).ravel()

    k = np.arange(1, n_modes + 1, dtype=float)
    basis = math.sqrt(2.0) * np.sin(np.pi * np.outer(k, x))
    return basis @ (w * func(x))


def sine_coefficients(
    func: Callable[[np.ndarray], np.ndarray],
    n_modes: int,
    edges: Optional[np.ndarray] = None,
    max_nodes: int = 128,
) -> np.ndarray:
    """First n_modes coefficients <func, phi_k> by composite Gauss-Legendre quadrature.

    The node count per panel doubles until no coefficient moves by more than
    QUADRATURE_TOL.
    """
    if n_modes < 1:
        raise ValidationError(f"n_modes must be >= 1, got {n_modes!r}")
    if edges is None:
        edges = np.linspace(0.0, 1.0, max(16, 2 * n_modes) + 1)

    nodes = 8
    previous = _gauss_legendre_sine_coefficients(func, n_modes, edges, nodes)
    while nodes < max_nodes:
        nodes *= 2
        current = _gauss_legendre_sine_coefficients(func, n_modes, edges, nodes)
        change = float(np.max(np.abs(current - previous)))
        if change <= QUADRATURE_TOL:
            logger.debug(f"Projected initial condition | n_modes={n_modes} nodes_per_panel={nodes} change={change:.3e}")
            return current
        previous = current

    raise QuadratureError(
        f"sine projection did not settle: last doubling to {nodes} nodes per panel "
        f"changed a coefficient by {change:.3e} > {QUADRATURE_TOL:.0e}"
    )


def project_initial_condition(
    kind: InitialKind | str,
    n_modes: int,
    samples: Optional[Union[Sequence[float], np.ndarray]] = None,
) -> StateVector:
    """Fourier sine coefficients of the initial profile.

    `samples` (Custom only) are values on a uniform grid of [0, 1] including both
    endpoints; they are interpolated by a cubic spline and each spline piece is
    its own quadrature panel.
    """
    kind = InitialKind(kind)
    if kind is InitialKind.PAPER_POLYNOMIAL:
        return StateVector(sine_coefficients(paper_polynomial, n_modes))

    if samples is None:
        raise ValidationError("a custom initial condition needs samples")
    values = np.asarray(samples, dtype=float)
    if values.ndim != 1 or values.size < 4:
        raise ValidationError("custom samples must be a 1-d array of at least 4 values")
    grid = np.linspace(0.0, 1.0, values.size)
    spline = CubicSpline(grid, values)
    return StateVector(sine_coefficients(spline, n_modes, edges=grid))


# -- the scheme ---------------------------------------------------------------

def _advance(coeffs: np.ndarray, dW, beta1: float, denominators: np.ndarray) -> np.ndarray:
    """One implicit Euler-Maruyama step; the ensemble runner calls it on (paths, N) blocks."""
    return (coeffs + beta1 * coeffs * dW) / denominators


def implicit_em_step(
    state: StateVector,
    dW: float,
    params: ModelParams,
    spectrum: EigenSpectrum,
    tau: float,
) -> StateVector:
    if state.n_modes != spectrum.n_modes:
        raise ValidationError(f"state has {state.n_modes} modes, spectrum has {spectrum.n_modes}")
    denominators = step_denominators(params, spectrum, tau)
    return StateVector(_advance(state.coeffs, dW, params.beta1, denominators))


def simulate_path(
    y0: StateVector,
    params: ModelParams,
    spectrum: EigenSpectrum,
    disc: Discretization,
    path: BrownianPath,
) -> list[tuple[float, StateVector]]:
    """Trajectory [(t_0, Y_0), ..., (t_n, Y_n)] driven by the given increments."""
    if not (y0.n_modes == spectrum.n_modes == disc.n_modes):
        raise ValidationError(
            f"mode counts disagree: y0={y0.n_modes}, spectrum={spectrum.n_modes}, disc={disc.n_modes}"
        )
    if path.n_steps < disc.n_steps:
        raise ValidationError(f"path has {path.n_steps} increments, {disc.n_steps} are needed")

    denominators = step_denominators(params, spectrum, disc.tau)
    trajectory = [(0.0, y0)]
    coeffs = y0.coeffs
    for n in range(disc.n_steps):
        coeffs = _advance(coeffs, path.increments[n], params.beta1, denominators)
        trajectory.append(((n + 1) * disc.tau, StateVector(coeffs)))
    return trajectory


def trajectory_frame(trajectory: list[tuple[float, StateVector]], include_coeffs: bool = False) -> pd.DataFrame:
    """CSV view with columns t,norm_sq and optionally Y_1..Y_N."""
    frame = pd.DataFrame(
        {
            "t": [t for t, _ in trajectory],
            "norm_sq": [state.norm_sq for _, state in trajectory],
        }
    )
    if include_coeffs and trajectory:
        coeffs = np.vstack([state.coeffs for _, state in trajectory])
        for k in range(coeffs.shape[1]):
            frame[f"Y_{k + 1}"] = coeffs[:, k]
    return frame


# -- exact oracles ------------------------------------------------------------

def exact_trajectory(
    y0: StateVector,
    params: ModelParams,
    spectrum: EigenSpectrum,
    times: np.ndarray,
    W: np.ndarray,
) -> np.ndarray:
    """Closed-form coefficients y_k(t) at every (t, W(t)) pair, shape (len(times), N)."""
    times = np.asarray(times, dtype=float)
    W = np.asarray(W, dtype=float)
    drift = -np.outer(times, spectrum.values - params.beta0)
    noise = params.beta1 * W - 0.5 * params.beta1 ** 2 * times
    return y0.coeffs[None, :] * np.exp(drift + noise[:, None])


def exact_solution(
    y0: StateVector,
    params: ModelParams,
    spectrum: EigenSpectrum,
    t: float,
    W_t: float,
) -> StateVector:
    """y_k(t) = y0^k exp(-(lambda_k - beta0) t) exp(beta1 W(t) - beta1^2 t / 2)."""
    if t < 0.0:
        raise ValidationError(f"t must be >= 0, got {t!r}")
    return StateVector(exact_trajectory(y0, params, spectrum, np.array([t]), np.array([W_t]))[0])


def exact_mode_moment(y0_k: float, params: ModelParams, lambda_k: float, t: float) -> float:
    """E|y_k(t)|^p = |y0^k|^p exp((-p (lambda_k - beta0) + p (p-1) beta1^2 / 2) t)."""
    if t < 0.0:
        raise ValidationError(f"t must be >= 0, got {t!r}")
    p = params.p
    exponent = -p * (lambda_k - params.beta0) + p * (p - 1.0) / 2.0 * params.beta1 ** 2
    return abs(y0_k) ** p * math.exp(exponent * t)


def discrete_second_moment_factor(params: ModelParams, lambda_k: float, tau: float) -> float:
    """Exact one-step factor a_k(tau)^2 (1 + beta1^2 tau) of E|Y_n^k|^2."""
    denominator = 1.0 + tau * (lambda_k - params.beta0)
    if denominator <= 0.0:
        raise TimeStepTooLargeError(1, lambda_k, params.beta0, tau)
    return (1.0 + params.beta1 ** 2 * tau) / denominator ** 2


def discrete_second_moment_recursion(
    y0_k: float,
    params: ModelParams,
    lambda_k: float,
    tau: float,
    n: int,
) -> float:
    """E|Y_n^k|^2 of the scheme, exactly: |y0^k|^2 [a_k^2 (1 + beta1^2 tau)]^n."""
    if params.p != 2.0:
        raise ValidationError(f"the exact discrete recursion is for p = 2, got p = {params.p!r}")
    if n < 0:
        raise ValidationError(f"n must be >= 0, got {n!r}")
    return y0_k ** 2 * discrete_second_moment_factor(params, lambda_k, tau) ** n


def discrete_second_moment_rate(params: ModelParams, lambda_k: float, tau: float) -> float:
    """-log(a_k^2 (1 + beta1^2 tau)) / tau, which tends to mu_2 as tau -> 0."""
    return -math.log(discrete_second_moment_factor(params, lambda_k, tau)) / tau


def strong_error_study(
    y0: StateVector,
    params: ModelParams,
    spectrum: EigenSpectrum,
    horizon: float,
    taus: Sequence[float],
    n_paths: int,
    master_seed: int,
) -> tuple[pd.DataFrame, float]:
    """Mean over paths of max_n ||Y_n - y(t_n)|| for each tau, on shared paths.

    Every path is drawn at the finest tau and coarsened for the other levels.
    Returns the (tau, error) table and the least-squares slope of log error
    against log tau.
    """
    taus = sorted(float(t) for t in taus)
    if len(taus) < 2:
        raise ValidationError("a convergence study needs at least two step sizes")
    if n_paths < 1:
        raise ValidationError(f"n_paths must be >= 1, got {n_paths!r}")

    finest = taus[0]
    factors = []
    for tau in taus:
        factor = round(tau / finest)
        if abs(factor * finest - tau) > 1e-12 * tau:
            raise ValidationError(f"step {tau!r} is not an integer multiple of the finest step {finest!r}")
        factors.append(factor)

    fine_disc = Discretization(n_modes=spectrum.n_modes, tau=finest, horizon=horizon)
    for tau, factor in zip(taus, factors):
        if fine_disc.n_steps % factor:
            raise ValidationError(f"horizon {horizon!r} is not a whole number of steps of {tau!r}")

    errors = np.zeros(len(taus))
    for path_index in range(n_paths):
        fine_path = generate_path(master_seed, fine_disc, path_index)
        for level, (tau, factor) in enumerate(zip(taus, factors)):
            path = coarsen_path(fine_path, factor)
            disc = Discretization(n_modes=spectrum.n_modes, tau=tau, horizon=path.n_steps * tau)
            trajectory = simulate_path(y0, params, spectrum, disc, path)
            scheme = np.vstack([state.coeffs for _, state in trajectory])
            times = np.arange(path.n_steps + 1) * tau
            exact = exact_trajectory(y0, params, spectrum, times, path.cumulative)
            errors[level] += np.max(np.sqrt(squared_norms(scheme - exact)))
    errors /= n_paths

    order = float(linregress(np.log(taus), np.log(errors)).slope)
    logger.info(f"Strong error study | levels={len(taus)} paths={n_paths} order={order:.3f}")
    return pd.DataFrame({"tau": taus, "error": errors}), order
