"""
Exception hierarchy shared by the numerical core, the CLI and the HTTP service.

Exit codes used by the CLI:
  0  success
  1  tolerance failure (evaluate)
  2  invalid configuration
  3  numerical failure
"""

from typing import Optional

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class EigenRomError(Exception):
    """Root of every error raised by eigenrom."""

    exit_code = EXIT_NUMERICAL


class ConfigError(EigenRomError, ValueError):
    """Invalid configuration or argument outside its domain."""

    exit_code = EXIT_CONFIG


class NumericalError(EigenRomError):
    """A numerical routine could not produce a trustworthy result."""


class EigenSolverError(NumericalError):
    pass


class NewtonError(NumericalError):
    """Newton iteration for the nonlinear eigenproblem failed."""

    def __init__(self, message: str, residual: Optional[float] = None,
                 iterations: Optional[int] = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PodError(NumericalError):
    pass


class GprError(NumericalError):
    pass


class FomError(NumericalError):
    """Full-order solve failed at a specific parameter."""

    def __init__(self, message: str, mu=None):
        super().__init__(message)
        self.mu = None if mu is None else [float(m) for m in mu]


class ModelFormatError(EigenRomError):
    """Stored model has the wrong schema, version, or fails re-verification."""


class ToleranceError(EigenRomError):
    exit_code = EXIT_TOLERANCE
