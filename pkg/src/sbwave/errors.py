"""Exception hierarchy.

`NumericalFailure` subclasses map to CLI exit code 3; `ConfigError` to 2.
"""

from __future__ import annotations


class SbwaveError(Exception):
    """Base class for all package errors."""


class DomainError(SbwaveError, ValueError):
    """A point or kernel does not fit inside the grid box."""


class DegenerateDensityError(SbwaveError, ValueError):
    """A density has zero (or negative) total mass."""


class AssumptionViolation(SbwaveError, ValueError):
    """Problem data breaks a structural assumption (e.g. Sigma not positive definite)."""


class ConfigError(SbwaveError):
    """Bad or missing configuration."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class NumericalFailure(SbwaveError):
    """Non-convergence, step-size violation or blow-up."""


class ConvergenceError(NumericalFailure):
    def __init__(self, message: str, log: list[dict] | None = None):
        super().__init__(message)
        self.log = log or []


class StepSizeError(NumericalFailure):
    """Time step violates the explicit-scheme CFL bound."""


class InstabilityError(NumericalFailure):
    """Explicit integration produced a significantly negative density."""


class BlowUpError(NumericalFailure):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
