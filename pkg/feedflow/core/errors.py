# feedflow/core/errors.py
"""Exception hierarchy shared by the numerical layer, the estimation services and the CLI."""

from typing import Any, Dict, List, Optional


class FeedflowError(Exception):
    """Base class for all feedflow errors."""

    exit_code: int = 1


class DomainError(FeedflowError, ValueError):
    """Raised when an argument lies outside the domain of an operation."""

    exit_code = 1


class ConfigError(FeedflowError, ValueError):
    """Raised when a run configuration is invalid or inconsistent with the data."""

    exit_code = 1


class DataError(FeedflowError, ValueError):
    """Raised when input data cannot be parsed or violates the data contract.

    Args:
        message: Summary of the problem.
        details: Optional list of detail lines (per-station gaps, line numbers, ...).
    """

    exit_code = 2

    def __init__(self, message: str, details: Optional[List[str]] = None):
        self.details = details or []
        if self.details:
            message = message + "\n  " + "\n  ".join(self.details)
        super().__init__(message)


class NumericalError(FeedflowError, ArithmeticError):
    """Raised when a numerical evaluation produces an unusable result.

    Args:
        message: Summary of the problem.
        cell: Offending (station index, timepoint index) cell, if known.
        eigenvalue: Offending eigenvalue for singular matrices, if known.
    """

    exit_code = 3

    def __init__(self, message: str, cell: Optional[tuple] = None, eigenvalue: Optional[float] = None):
        self.cell = cell
        self.eigenvalue = eigenvalue
        super().__init__(message)


class ConvergenceError(NumericalError):
    """Raised when the outer EM loop diverges.

    Args:
        message: Summary of the problem.
        trace: Outer-iteration records collected before the abort.
    """

    def __init__(self, message: str, trace: Optional[List[Dict[str, Any]]] = None):
        self.trace = trace or []
        super().__init__(message)
