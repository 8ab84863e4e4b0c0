"""Stability lab for linear evolution equations with multiplicative noise.

Spectral Galerkin truncation, implicit Euler-Maruyama time stepping, Monte
Carlo moment estimation and closed-form stability criteria.
"""

from .errors import (
    ComputationError,
    ConfigError,
    ConvergenceError,
    EstimationError,
    QuadratureError,
    StochStabError,
    TimeStepTooLargeError,
    ValidationError,
)
from .operators import EigenSpectrum, SpectrumKind, build_spectrum
from .stability import ModelParams, StabilityVerdict, classify
from .sde_engine import BrownianPath, Discretization, StateVector
from .montecarlo import EnsembleConfig, EnsembleRunner, MomentSeries

__version__ = "0.1.0"
