"""
Exception hierarchy shared by the library and the command-line interface.
"""

from typing import Optional


class SikError(Exception):
    """Base class for all errors raised by sik."""


class ConfigError(SikError, ValueError):
    """Invalid configuration, inconsistent dimensions or unusable input files."""


class NumericalError(SikError, RuntimeError):
    """A numerical routine could not produce a trustworthy result."""


class SingularFisherError(NumericalError):
    """The Fisher information at the reference parameters is (numerically) singular."""

    def __init__(self, condition_number: float, message: Optional[str] = None):
        self.condition_number = condition_number
        super().__init__(
            message
            or f"Fisher information is singular (condition number {condition_number:.3e})"
        )


class ConvergenceError(NumericalError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, residual: float, message: Optional[str] = None):
        self.residual = residual
        super().__init__(message or f"solver did not converge (last residual {residual:.3e})")
