"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EncoderError(Exception):
    """Base class for all package errors."""


class DomainError(EncoderError, ValueError):
    """A time or argument lies outside the domain of an operation."""


class NumericError(EncoderError, ArithmeticError):
    """The solver produced a non-finite state."""


class IngestionError(EncoderError):
    """A recording or manifest could not be loaded into a valid trial."""


class DuplicateTrialError(IngestionError):
    """Two manifest entries share the same (gas, level, trial) key."""


class CalibrationError(EncoderError):
    """No parameter set satisfies the calibration constraints.

    Attributes:
        diagnostics: Per-trial measurements gathered before the failure.
    """

    def __init__(self, message: str, diagnostics: list | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or []
