"""Path ensembles, moment estimates, decay-rate fits and pathwise exponents."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import linregress

from .errors import EstimationError, ValidationError
from .operators import EigenSpectrum
from .sde_engine import (
    Discretization,
    StateVector,
    _advance,
    brownian_increments,
    discrete_second_moment_factor,
    exact_trajectory,
    generate_path,
    squared_norms,
    step_denominators,
)
from .stability import ModelParams

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 128


class EnsembleConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_paths: int = Field(ge=1, description="Number of independent sample paths")
    master_seed: int = Field(default=7, ge=0, lt=2**64, description="Master seed of the path streams")
    output_stride: int = Field(default=1, ge=1, description="Record every m-th step")
    normalize: bool = Field(default=False, description="Divide moments by their t=0 value")


@dataclass
class MomentSeries:
    """Estimates of E||Y_n||^p at the recorded times."""

    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n_paths: int
    p: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.times.shape == self.values.shape == self.stderr.shape) or self.times.ndim != 1:
            raise ValidationError("times, values and stderr must be 1-d arrays of equal length")
        if np.any(self.stderr < 0.0) or np.any(self.values < 0.0):
            raise ValidationError("moment values and standard errors must be non-negative")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "value": self.values, "stderr": self.stderr})


@dataclass(frozen=True)
class DecayFit:
    rate: float
    r_squared: float
    stderr: float


@dataclass(frozen=True)
class _ChunkStats:
    """Count, mean and sum of squared deviations per recorded time."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "_ChunkStats":
        # samples: (recorded times, paths)
        mean = samples.mean(axis=1)
        deviation = samples - mean[:, None]
        return cls(count=samples.shape[1], mean=mean, m2=np.sum(deviation * deviation, axis=1))

    def merge(self, other: "_ChunkStats") -> "_ChunkStats":
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / count)
        m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / count)
        return _ChunkStats(count=count, mean=mean, m2=m2)


def _pairwise_merge(stats: list[_ChunkStats]) -> _ChunkStats:
    """Merge adjacent pairs level by level; the tree shape depends only on the chunk count."""
    while len(stats) > 1:
        merged = [stats[i].merge(stats[i + 1]) for i in range(0, len(stats) - 1, 2)]
        if len(stats) % 2:
            merged.append(stats[-1])
        stats = merged
    return stats[0]


def _propagate(
    coeffs: np.ndarray,
    increments: np.ndarray,
    beta1: float,
    denominators: np.ndarray,
    stride: int,
) -> np.ndarray:
    """Squared norms at steps 0, stride, 2 stride, ... for a (paths, N) block."""
    n_steps = increments.shape[1]
    recorded = n_steps // stride + 1
    norms = np.empty((recorded, coeffs.shape[0]))
    norms[0] = squared_norms(coeffs)
    slot = 1
    for n in range(n_steps):
        coeffs = _advance(coeffs, increments[:, n, None], beta1, denominators)
        if (n + 1) % stride == 0:
            norms[slot] = squared_norms(coeffs)
            slot += 1
    return norms


def clamp_underflow(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Replace exact zeros by the smallest positive normal double."""
    values = np.asarray(values, dtype=float)
    zeros = values == 0.0
    count = int(np.count_nonzero(zeros))
    if count:
        logger.warning(f"Clamped {count} underflowed values to {np.finfo(float).tiny!r}")
        values = np.where(zeros, np.finfo(float).tiny, values)
    return values, count


class EnsembleRunner:
    """Monte Carlo driver over independent seeded paths.

    Paths are split into fixed chunks of `chunk_size` consecutive path indices.
    Chunk statistics are merged in chunk order, so the worker count never
    changes a single output bit.
    """

    def __init__(self, workers: int = 1, chunk_size: int = DEFAULT_CHUNK_SIZE):
        if workers < 1:
            raise ValidationError(f"workers must be >= 1, got {workers!r}")
        if chunk_size < 1:
            raise ValidationError(f"chunk_size must be >= 1, got {chunk_size!r}")
        self.workers = workers
        self.chunk_size = chunk_size

    def _chunk(
        self,
        start: int,
        stop: int,
        y0: StateVector,
        beta1: float,
        denominators: np.ndarray,
        disc: Discretization,
        cfg: EnsembleConfig,
        orders: Sequence[float],
    ) -> dict[float, _ChunkStats]:
        increments = np.empty((stop - start, disc.n_steps))
        for row, path_index in enumerate(range(start, stop)):
            increments[row] = brownian_increments(cfg.master_seed, path_index, disc.n_steps, disc.tau).increments
        coeffs = np.tile(y0.coeffs, (stop - start, 1))
        norm_sq = _propagate(coeffs, increments, beta1, denominators, cfg.output_stride)
        return {p: _ChunkStats.from_samples(norm_sq ** (p / 2.0)) for p in orders}

    def run_ensemble_orders(
        self,
        y0: StateVector,
        params: ModelParams,
        spectrum: EigenSpectrum,
        disc: Discretization,
        cfg: EnsembleConfig,
        orders: Sequence[float],
    ) -> dict[float, MomentSeries]:
        """Moments of several orders p estimated from one shared set of paths."""
        orders = [float(p) for p in orders]
        if not orders or any(p < 1.0 for p in orders):
            raise ValidationError(f"moment orders must be a non-empty list of reals >= 1, got {orders!r}")
        if not (y0.n_modes == spectrum.n_modes == disc.n_modes):
            raise ValidationError(
                f"mode counts disagree: y0={y0.n_modes}, spectrum={spectrum.n_modes}, disc={disc.n_modes}"
            )
        denominators = step_denominators(params, spectrum, disc.tau)

        bounds = [
            (start, min(start + self.chunk_size, cfg.n_paths))
            for start in range(0, cfg.n_paths, self.chunk_size)
        ]

        def work(bound):
            return self._chunk(bound[0], bound[1], y0, params.beta1, denominators, disc, cfg, orders)

        try:
            if self.workers == 1 or len(bounds) == 1:
                chunks = [work(bound) for bound in bounds]
            else:
                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    chunks = list(pool.map(work, bounds))
        except Exception as e:
            logger.error(f"Ensemble failed: {e}")
            raise

        times = disc.recorded_steps(cfg.output_stride) * disc.tau
        result = {}
        for p in orders:
            stats = _pairwise_merge([chunk[p] for chunk in chunks])
            values = stats.mean
            if stats.count > 1:
                stderr = np.sqrt(stats.m2 / (stats.count - 1)) / math.sqrt(stats.count)
            else:
                stderr = np.zeros_like(values)
            if cfg.normalize:
                if values[0] == 0.0:
                    raise EstimationError("cannot normalize: the t=0 moment is zero")
                values, stderr = values / values[0], stderr / values[0]
            result[p] = MomentSeries(times=times, values=values, stderr=stderr, n_paths=cfg.n_paths, p=p)

        logger.info(
            f"Ensemble finished | paths={cfg.n_paths} steps={disc.n_steps} modes={disc.n_modes} "
            f"orders={orders} chunks={len(bounds)}"
        )
        return result

    def run_ensemble(
        self,
        y0: StateVector,
        params: ModelParams,
        spectrum: EigenSpectrum,
        disc: Discretization,
        cfg: EnsembleConfig,
    ) -> MomentSeries:
        """Sample mean of ||Y_n||^p over cfg.n_paths paths with its standard error."""
        return self.run_ensemble_orders(y0, params, spectrum, disc, cfg, [params.p])[params.p]

    def sample_paths(
        self,
        y0: StateVector,
        params: ModelParams,
        spectrum: EigenSpectrum,
        disc: Discretization,
        master_seed: int,
        realizations: int,
        stride: int = 1,
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        """(times, ||Y_n||^2) for realization r driven by seed master_seed + r."""
        if realizations < 1:
            raise ValidationError(f"realizations must be >= 1, got {realizations!r}")
        denominators = step_denominators(params, spectrum, disc.tau)
        times = disc.recorded_steps(stride) * disc.tau

        paths = []
        for r in range(realizations):
            path = generate_path(master_seed + r, disc)
            norm_sq = _propagate(y0.coeffs[None, :], path.increments[None, :], params.beta1, denominators, stride)
            paths.append((times, norm_sq[:, 0]))
        return paths


def run_ensemble(
    y0: StateVector,
    params: ModelParams,
    spectrum: EigenSpectrum,
    disc: Discretization,
    cfg: EnsembleConfig,
    workers: int = 1,
) -> MomentSeries:
    return EnsembleRunner(workers=workers).run_ensemble(y0, params, spectrum, disc, cfg)


def discrete_second_moment_series(
    y0: StateVector,
    params: ModelParams,
    spectrum: EigenSpectrum,
    disc: Discretization,
    stride: int = 1,
) -> MomentSeries:
    """Exact E||Y_n||^2 of the scheme: sum_k |y0^k|^2 [a_k^2 (1 + beta1^2 tau)]^n."""
    step_denominators(params, spectrum, disc.tau)
    factors = np.array([discrete_second_moment_factor(params, lam, disc.tau) for lam in spectrum.eigenvalues])
    steps = disc.recorded_steps(stride)
    values = (y0.coeffs ** 2)[None, :] * factors[None, :] ** steps[:, None]
    return MomentSeries(
        times=steps * disc.tau,
        values=values.sum(axis=1),
        stderr=np.zeros(steps.size),
        n_paths=0,
        p=2.0,
    )


def fit_decay_rate(series: MomentSeries, window: Optional[tuple[float, float]] = None) -> DecayFit:
    """Negated least-squares slope of log(values) against t over an inclusive window.

    The default window is the second half of the recorded horizon. The reported
    stderr combines the regression error with the Monte Carlo error of the
    values propagated through the slope weights.
    """
    times, values = series.times, series.values
    if times.size == 0:
        raise EstimationError("cannot fit an empty series")
    if window is None:
        window = (0.5 * times[-1], times[-1])
    lo, hi = window
    if lo > hi:
        raise ValidationError(f"fit window is reversed: {window!r}")

    mask = (times >= lo) & (times <= hi)
    t, v, se = times[mask], values[mask], series.stderr[mask]
    if t.size < 3:
        raise EstimationError(f"need at least 3 points in the fit window {window!r}, found {t.size}")
    if np.any(v <= 0.0):
        raise EstimationError(f"non-positive moment inside the fit window {window!r}; log is undefined")

    log_v = np.log(v)
    regression = linregress(t, log_v)
    residuals = log_v - (regression.intercept + regression.slope * t)
    ss_res = float(np.sum(residuals ** 2))
    ss_tot = float(np.sum((log_v - log_v.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot

    centered = t - t.mean()
    weights = centered / np.sum(centered ** 2)
    mc_error = float(np.sum(np.abs(weights) * se / v))
    regression_error = float(regression.stderr) if np.isfinite(regression.stderr) else 0.0

    return DecayFit(rate=float(-regression.slope), r_squared=r_squared, stderr=math.hypot(mc_error, regression_error))


def pathwise_exponent(times: np.ndarray, norms_p: np.ndarray, tail_fraction: float = 0.5) -> float:
    """Mean of log(||y||^p) / t over the last tail_fraction of recorded times (t > 0 only)."""
    if not (0.0 < tail_fraction < 1.0):
        raise ValidationError(f"tail_fraction must lie in (0, 1), got {tail_fraction!r}")
    times = np.asarray(times, dtype=float)
    norms_p = np.asarray(norms_p, dtype=float)
    if times.size == 0 or times.shape != norms_p.shape:
        raise EstimationError("a trajectory needs matching, non-empty times and norms")

    n_tail = max(1, math.ceil(tail_fraction * times.size))
    t, values = times[-n_tail:], norms_p[-n_tail:]
    positive_time = t > 0.0
    t, values = t[positive_time], values[positive_time]
    if t.size == 0:
        raise EstimationError("the averaging tail holds no positive times")
    if np.any(values <= 0.0):
        raise EstimationError("zero norm in the averaging tail; log is undefined")
    return float(np.mean(np.log(values) / t))


def exact_pathwise_exponents(
    y0: StateVector,
    params: ModelParams,
    spectrum: EigenSpectrum,
    horizon: float,
    tau: float,
    n_paths: int,
    master_seed: int,
    tail_fraction: float = 0.5,
) -> tuple[np.ndarray, int]:
    """Pathwise exponents of the normalized exact energy (||y(t)|| / ||y0||)^p, one per seeded path.

    Also returns the number of underflowed energy values clamped across all paths.
    """
    if n_paths < 1:
        raise ValidationError(f"n_paths must be >= 1, got {n_paths!r}")
    disc = Discretization(n_modes=spectrum.n_modes, tau=tau, horizon=horizon)
    times = disc.recorded_steps() * disc.tau
    initial = y0.norm_sq
    if initial == 0.0:
        raise EstimationError("cannot normalize a zero initial state")

    exponents = np.empty(n_paths)
    clamped = 0
    for path_index in range(n_paths):
        path = generate_path(master_seed, disc, path_index)
        coeffs = exact_trajectory(y0, params, spectrum, times, path.cumulative)
        energy, count = clamp_underflow((squared_norms(coeffs) / initial) ** (params.p / 2.0))
        clamped += count
        exponents[path_index] = pathwise_exponent(times, energy, tail_fraction)
    return exponents, clamped
