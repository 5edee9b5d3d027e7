"""Exception hierarchy shared by every module.

The CLI maps these to exit codes: configuration problems exit with 2,
numeric and divergence failures with 3, and I/O or file-layout failures with 4.
"""

from __future__ import annotations


class FredholmSEError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FredholmSEError, ValueError):
    """Invalid configuration or argument (bad key, out-of-range value)."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class InputShapeError(FredholmSEError, ValueError):
    """An array does not have the shape the operation expects."""


class NumericError(FredholmSEError, ArithmeticError):
    """A non-finite or otherwise unusable number was produced."""


class DivergenceError(NumericError):
    """The alternating optimizer blew up; ``trace`` holds the rows so far."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class RankDeficiencyWarning(UserWarning):
    """Least-squares design was rank deficient; a minimum-norm solution was used."""


class ParseError(FredholmSEError, ValueError):
    """An input file does not follow the expected layout; ``column`` names the culprit."""

    def __init__(self, message: str, column: str | None = None):
        self.column = column
        if column is not None:
            message = f"column {column!r}: {message}"
        super().__init__(message)
