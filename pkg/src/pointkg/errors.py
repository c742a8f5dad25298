"""Exception types raised across the package."""

from __future__ import annotations


class PointKGError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PointKGError, ValueError):
    """Invalid system, potential, grid or scenario configuration."""


class CoercivityError(ConfigurationError):
    """Declared coercivity constants (a, b) are inconsistent with the data."""


class NumericOverflowError(PointKGError, ArithmeticError):
    """A potential or force evaluation produced a non-finite value."""


class DomainError(PointKGError, ValueError):
    """Argument outside the domain of a special function."""


class AccuracyError(PointKGError):
    """A quadrature could not reach the requested tolerance within budget."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


class IndexContractError(PointKGError, ValueError):
    """Site indices violate the contract of the called operation."""


class HistoryRangeError(PointKGError, ValueError):
    """Requested time lies outside the solved history."""


class SingularPointError(PointKGError, ValueError):
    """Field requested at (or too close to) an interaction point."""


class SolverError(PointKGError, RuntimeError):
    """Time stepping failed (fixed-point non-convergence after all halvings)."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class OracleFailure(PointKGError, RuntimeError):
    """A reference solver detected instability."""
