"""Exception hierarchy shared by the library, the CLI and the HTTP app."""

from typing import Optional


class StochStabError(Exception):
    """Base class for every error raised by stochstab."""


class ValidationError(StochStabError, ValueError):
    """Invalid user input. The CLI maps it to exit code 1, the API to HTTP 400."""


class TimeStepTooLargeError(ValidationError):
    """The implicit step 1 + tau(lambda_k - beta0) is not positive for some mode."""

    def __init__(self, mode: int, lambda_k: float, beta0: float, tau: float):
        self.mode = mode
        self.lambda_k = lambda_k
        self.beta0 = beta0
        self.tau = tau
        denominator = 1.0 + tau * (lambda_k - beta0)
        super().__init__(
            f"time step too large for this drift: mode {mode} has "
            f"1 + tau*(lambda_k - beta0) = {denominator!r} <= 0 "
            f"(tau={tau!r}, lambda_k={lambda_k!r}, beta0={beta0!r})"
        )


class ConfigError(ValidationError):
    """A config file line could not be parsed or validated."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ComputationError(StochStabError, RuntimeError):
    """A numerical procedure failed at runtime. CLI exit code 2, HTTP 500."""


class ConvergenceError(ComputationError):
    """An iterative solver stalled before reaching its tolerance."""


class QuadratureError(ComputationError):
    """A quadrature rule failed its self-consistency check."""


class EstimationError(ComputationError):
    """An estimator is undefined on the given data (zero norms, too few points)."""
