"""Closed-form stability conditions for dy + Ay dt = beta0 y dt + beta1 y dW.

Only lambda_1 of A enters. Moment stability of order p holds when
(p-1) beta1^2 < 2 (lambda_1 - beta0), with decay rate
mu_p = p (lambda_1 - beta0) - p (p-1)/2 beta1^2. Almost sure stability holds
when beta1^2 > 2 (beta0 - lambda_1), with rate mu_as = p/2 beta1^2 + p (lambda_1 - beta0).
Equality points are reported as not stable.
"""

import logging
import math
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ValidationError

logger = logging.getLogger(__name__)


class ModelParams(BaseModel):
    """Drift beta0, noise intensity beta1 and moment order p."""

    model_config = ConfigDict(frozen=True)

    beta0: float = Field(description="Drift coefficient (1/time)", allow_inf_nan=False)
    beta1: float = Field(description="Noise intensity (1/sqrt(time))", allow_inf_nan=False)
    p: float = Field(default=2.0, ge=1.0, description="Moment order, any real >= 1", allow_inf_nan=False)


class StabilityVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    moment_stable: bool
    as_stable: bool
    mu_p: Optional[float] = None
    mu_as: Optional[float] = None

    @model_validator(mode="after")
    def _rates_match_flags(self) -> "StabilityVerdict":
        if self.moment_stable != (self.mu_p is not None):
            raise ValueError("mu_p is present exactly when moment_stable")
        if self.as_stable != (self.mu_as is not None):
            raise ValueError("mu_as is present exactly when as_stable")
        return self


class RegionKind(str, Enum):
    MOMENT = "moment"
    ALMOST_SURE = "as"


def _require_lambda1(lambda1: float) -> float:
    if not (math.isfinite(lambda1) and lambda1 > 0.0):
        raise ValidationError(f"lambda1 must be a positive finite number, got {lambda1!r}")
    return float(lambda1)


def moment_decay_rate(params: ModelParams, lambda1: float) -> float:
    lambda1 = _require_lambda1(lambda1)
    p = params.p
    return p * (lambda1 - params.beta0) - p * (p - 1.0) / 2.0 * params.beta1 ** 2


def as_decay_rate(params: ModelParams, lambda1: float) -> float:
    lambda1 = _require_lambda1(lambda1)
    p = params.p
    return p / 2.0 * params.beta1 ** 2 + p * (lambda1 - params.beta0)


def classify(params: ModelParams, lambda1: float) -> StabilityVerdict:
    """Evaluate both sufficient conditions with strict inequalities."""
    lambda1 = _require_lambda1(lambda1)
    beta0, beta1_sq, p = params.beta0, params.beta1 ** 2, params.p

    moment_stable = (p - 1.0) * beta1_sq < 2.0 * (lambda1 - beta0)
    as_stable = beta1_sq > 2.0 * (beta0 - lambda1)

    mu_p = moment_decay_rate(params, lambda1) if moment_stable else None
    mu_as = as_decay_rate(params, lambda1) if as_stable else None
    # a point within rounding of the boundary keeps the conservative verdict
    if mu_p is not None and mu_p <= 0.0:
        moment_stable, mu_p = False, None
    if mu_as is not None and mu_as <= 0.0:
        as_stable, mu_as = False, None

    return StabilityVerdict(moment_stable=moment_stable, as_stable=as_stable, mu_p=mu_p, mu_as=mu_as)


def region_boundary(
    kind: RegionKind | str,
    lambda1: float,
    p: float,
    beta1_samples: Sequence[float],
) -> list[tuple[float, float]]:
    """(beta1, beta0) points on the boundary of the stability region."""
    kind = RegionKind(kind)
    lambda1 = _require_lambda1(lambda1)
    if p < 1.0:
        raise ValidationError(f"p must be >= 1, got {p!r}")
    samples = np.asarray(list(beta1_samples), dtype=float)
    if samples.size == 0:
        raise ValidationError("beta1_samples must not be empty")

    if kind is RegionKind.MOMENT:
        beta0 = lambda1 - (p - 1.0) / 2.0 * samples ** 2
    else:
        beta0 = lambda1 + 0.5 * samples ** 2
    return list(zip(samples.tolist(), beta0.tolist()))


def region_frame(points: list[tuple[float, float]]) -> pd.DataFrame:
    """CSV view with columns beta1,beta0."""
    return pd.DataFrame(points, columns=["beta1", "beta0"])


def symmetric_samples(beta1_max: float, count: int) -> np.ndarray:
    """Odd number of beta1 samples on [-beta1_max, beta1_max] with an exact 0 in the middle."""
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count!r}")
    half = count // 2
    if half == 0:
        return np.zeros(1)
    return beta1_max * np.arange(-half, half + 1) / half


def noise_threshold(beta0: float, lambda1: float) -> Optional[float]:
    """Smallest |beta1| for almost sure stability; None when every beta1 works."""
    lambda1 = _require_lambda1(lambda1)
    if beta0 < lambda1:
        return None
    return math.sqrt(2.0 * (beta0 - lambda1))


def moment_noise_limit(beta0: float, lambda1: float, p: float) -> Optional[float]:
    """Largest |beta1| keeping p-th moment stability.

    None when p == 1 (the noise term vanishes) or when beta0 >= lambda1 (no beta1 works).
    """
    lambda1 = _require_lambda1(lambda1)
    if p <= 1.0 or beta0 >= lambda1:
        return None
    return math.sqrt(2.0 * (lambda1 - beta0) / (p - 1.0))


def stability_map(
    lambda1: float,
    p: float,
    beta1_samples: Sequence[float],
    beta0_samples: Sequence[float],
) -> pd.DataFrame:
    """Classification of a (beta1, beta0) grid, the shaded area of the region figures."""
    rows = []
    for beta0 in beta0_samples:
        for beta1 in beta1_samples:
            verdict = classify(ModelParams(beta0=float(beta0), beta1=float(beta1), p=p), lambda1)
            rows.append((float(beta1), float(beta0), verdict.moment_stable, verdict.as_stable))
    return pd.DataFrame(rows, columns=["beta1", "beta0", "moment_stable", "as_stable"])
