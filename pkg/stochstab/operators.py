"""Truncated spectra of the example operators.

Heat, hinged biharmonic and spectral fractional spectra are closed forms on
the unit interval with Dirichlet conditions. The degenerate operator
-(x^alpha v_x)_x only has its principal eigenvalue computed, by inverse power
iteration on a finite-difference discretization.
"""

import logging
import math
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded, eigh_tridiagonal
from scipy.optimize import brentq
from scipy.special import jv

from .errors import ConvergenceError, ValidationError

logger = logging.getLogger(__name__)

MIN_GRID_POINTS = 64


class SpectrumKind(str, Enum):
    HEAT = "heat"
    BIHARMONIC_HINGED = "biharmonic_hinged"
    FRACTIONAL = "fractional"
    DEGENERATE = "degenerate"


class EigenSpectrum(BaseModel):
    """Ascending eigenvalues lambda_1..lambda_N of a self-adjoint positive operator."""

    model_config = ConfigDict(frozen=True)

    kind: SpectrumKind
    eigenvalues: tuple[float, ...]
    s: Optional[float] = None
    alpha: Optional[float] = None

    @model_validator(mode="after")
    def _check(self) -> "EigenSpectrum":
        values = np.asarray(self.eigenvalues, dtype=float)
        if values.size == 0:
            raise ValueError("a spectrum needs at least one eigenvalue")
        if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
            raise ValueError("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(values) < 0.0):
            raise ValueError("eigenvalues must be non-decreasing")
        if (self.kind is SpectrumKind.FRACTIONAL) != (self.s is not None):
            raise ValueError("s is set exactly for fractional spectra")
        if (self.kind is SpectrumKind.DEGENERATE) != (self.alpha is not None):
            raise ValueError("alpha is set exactly for degenerate spectra")
        return self

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def lambda1(self) -> float:
        return self.eigenvalues[0]

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.eigenvalues, dtype=float)


def _require_count(name: str, value: int, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def heat_spectrum(n_modes: int) -> EigenSpectrum:
    """Dirichlet Laplacian on (0,1): lambda_k = (k pi)^2."""
    n_modes = _require_count("n_modes", n_modes)
    k = np.arange(1, n_modes + 1, dtype=float)
    values = (k * np.pi) ** 2
    return EigenSpectrum(kind=SpectrumKind.HEAT, eigenvalues=tuple(values.tolist()))


def biharmonic_hinged_spectrum(n_modes: int) -> EigenSpectrum:
    """Hinged biharmonic operator on (0,1); it is the square of the Dirichlet Laplacian."""
    heat = heat_spectrum(n_modes)
    values = heat.values ** 2
    return EigenSpectrum(kind=SpectrumKind.BIHARMONIC_HINGED, eigenvalues=tuple(values.tolist()))


def fractional_spectrum(base: EigenSpectrum, s: float) -> EigenSpectrum:
    """Spectral fractional power (-Delta)^s built from a heat spectrum."""
    if base.kind is not SpectrumKind.HEAT:
        raise ValidationError(f"fractional powers need a heat spectrum, got {base.kind.value}")
    if not (0.0 < s <= 1.0):
        raise ValidationError(f"s must lie in (0, 1], got {s!r}")

    if s == 1.0:
        values = base.eigenvalues
    else:
        values = tuple((base.values ** s).tolist())
    return EigenSpectrum(kind=SpectrumKind.FRACTIONAL, eigenvalues=values, s=float(s))


def _check_degenerate_args(alpha: float, grid_points: int) -> int:
    if not (0.0 <= alpha < 2.0):
        raise ValidationError(f"alpha must lie in [0, 2), got {alpha!r}")
    return _require_count("grid_points", grid_points, MIN_GRID_POINTS)


def degenerate_tridiagonal(alpha: float, grid_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrized tridiagonal matrix of the generalized problem K v = lambda M v.

    Uniform grid x_i = i/n with the weight x^alpha taken at cell midpoints and a
    lumped mass matrix. Node n carries the Dirichlet condition at x=1. Node 0 is
    an unknown (weighted-Neumann flux condition) when alpha >= 1, and is
    eliminated (Dirichlet) when alpha < 1.
    """
    n = _check_degenerate_args(alpha, grid_points)
    h = 1.0 / n

    midpoints = (np.arange(n) + 0.5) * h
    conductance = midpoints ** alpha / h  # cell i couples nodes i and i+1

    k_diag = np.empty(n)
    k_diag[0] = conductance[0]
    k_diag[1:] = conductance[:-1] + conductance[1:]
    k_off = -conductance[: n - 1]

    mass = np.full(n, h)
    mass[0] = 0.5 * h

    if alpha < 1.0:
        k_diag, k_off, mass = k_diag[1:], k_off[1:], mass[1:]

    scale = 1.0 / np.sqrt(mass)
    diag = k_diag * scale * scale
    off = k_off * scale[:-1] * scale[1:]
    return diag, off


def degenerate_principal_eigenvalue(
    alpha: float,
    grid_points: int,
    tol: float = 1e-12,
    max_iter: int = 1000,
) -> float:
    """Smallest eigenvalue of -(x^alpha v_x)_x on (0,1) by inverse power iteration (shift 0)."""
    diag, off = degenerate_tridiagonal(alpha, grid_points)

    banded = np.zeros((2, diag.size))
    banded[0, 1:] = off
    banded[1, :] = diag
    try:
        factor = cholesky_banded(banded)
    except LinAlgError as e:
        raise ConvergenceError(f"degenerate stiffness matrix is not positive definite: {e}") from e

    vector = np.linspace(1.0, 1.0 / diag.size, diag.size)
    vector /= np.linalg.norm(vector)
    estimate = math.inf

    for iteration in range(1, max_iter + 1):
        solved = cho_solve_banded((factor, False), vector)
        # Rayleigh quotient at `solved`, using A @ solved == vector
        new_estimate = float(np.dot(solved, vector) / np.dot(solved, solved))
        vector = solved / np.linalg.norm(solved)
        if abs(new_estimate - estimate) <= tol * new_estimate:
            logger.debug(
                f"Inverse iteration converged | alpha={alpha} grid_points={grid_points} "
                f"iterations={iteration} lambda1={new_estimate!r}"
            )
            return new_estimate
        estimate = new_estimate

    raise ConvergenceError(
        f"inverse iteration stalled after {max_iter} iterations "
        f"(alpha={alpha}, grid_points={grid_points}, last estimate {estimate!r})"
    )


def dense_principal_eigenvalue(alpha: float, grid_points: int) -> float:
    """Same discretization solved by a dense symmetric tridiagonal eigensolver."""
    diag, off = degenerate_tridiagonal(alpha, grid_points)
    values = eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(0, 0))
    return float(values[0])


def bessel_principal_eigenvalue(alpha: float) -> float:
    """Continuous principal eigenvalue for a(x) = x^alpha.

    Eigenfunctions are x^((1-alpha)/2) J_nu(2 sqrt(lambda) x^((2-alpha)/2) / (2-alpha))
    with nu = |1-alpha|/(2-alpha); the condition at x=1 puts 2 sqrt(lambda)/(2-alpha)
    at the first zero of J_nu.
    """
    if not (0.0 <= alpha < 2.0):
        raise ValidationError(f"alpha must lie in [0, 2), got {alpha!r}")
    nu = abs(1.0 - alpha) / (2.0 - alpha)

    lo = nu + 1e-9
    hi = lo
    while jv(nu, hi) > 0.0:
        lo, hi = hi, hi + 0.25
    first_zero = brentq(lambda z: jv(nu, z), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return ((2.0 - alpha) * first_zero / 2.0) ** 2


def degenerate_spectrum(alpha: float, grid_points: int = 4096) -> EigenSpectrum:
    """One-mode spectrum carrying the degenerate principal eigenvalue."""
    lambda1 = degenerate_principal_eigenvalue(alpha, grid_points)
    logger.info(f"Degenerate principal eigenvalue | alpha={alpha} grid_points={grid_points} lambda1={lambda1!r}")
    return EigenSpectrum(kind=SpectrumKind.DEGENERATE, eigenvalues=(lambda1,), alpha=float(alpha))


def build_spectrum(
    kind: SpectrumKind | str,
    n_modes: int = 1,
    s: Optional[float] = None,
    alpha: Optional[float] = None,
    grid_points: int = 4096,
) -> EigenSpectrum:
    """Dispatch by operator name, used by the CLI, the HTTP app and experiments."""
    try:
        kind = SpectrumKind(kind)
    except ValueError as e:
        choices = ", ".join(k.value for k in SpectrumKind)
        raise ValidationError(f"unknown operator {kind!r}; expected one of {choices}") from e

    if kind is SpectrumKind.HEAT:
        return heat_spectrum(n_modes)
    if kind is SpectrumKind.BIHARMONIC_HINGED:
        return biharmonic_hinged_spectrum(n_modes)
    if kind is SpectrumKind.FRACTIONAL:
        if s is None:
            raise ValidationError("the fractional operator needs s")
        return fractional_spectrum(heat_spectrum(n_modes), s)
    if alpha is None:
        raise ValidationError("the degenerate operator needs alpha")
    return degenerate_spectrum(alpha, grid_points)


def spectrum_frame(spectrum: EigenSpectrum) -> pd.DataFrame:
    """CSV view with columns k,lambda_k."""
    return pd.DataFrame(
        {
            "k": np.arange(1, spectrum.n_modes + 1),
            "lambda_k": spectrum.values,
        }
    )
