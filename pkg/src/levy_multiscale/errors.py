"""Exception hierarchy shared across the package.

The CLI maps these onto its stable exit-code contract:
usage errors -> 1, assumption failures -> 2, numerical failures -> 3,
I/O failures -> 4.
"""

from __future__ import annotations


class LevyMultiscaleError(Exception):
    """Base class for all package-specific errors."""


class UsageError(LevyMultiscaleError):
    """Invalid arguments, configs, or calling conventions (exit code 1)."""


class AssumptionError(LevyMultiscaleError):
    """A jump-measure standing assumption required by an operation fails (exit code 2)."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class NumericalError(LevyMultiscaleError):
    """Quadrature, linear solve, or scheme-stability failure (exit code 3).

    Carries whatever partial result and achieved tolerance are available.
    """

    def __init__(self, message: str, partial=None, achieved_tol=None):
        super().__init__(message)
        self.partial = partial
        self.achieved_tol = achieved_tol


class CFLViolation(NumericalError):
    """Explicit-scheme step size too large; carries the suggested step."""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class DegenerateVolatilityError(LevyMultiscaleError):
    """Harmonic volatility average is undefined because sigma vanishes on a node."""


class OutputError(LevyMultiscaleError):
    """Failure writing artifact files (exit code 4)."""
