"""Exception hierarchy. Each leaf maps to one CLI exit code."""
from __future__ import annotations


class OtdrError(Exception):
    """Base class for all package errors."""


class FiberRangeError(OtdrError, ValueError):
    """Position or delay outside the fiber link."""


class SaturationError(OtdrError):
    """Every activated gate fired; no finite power estimate exists."""


class ScheduleError(OtdrError, ValueError):
    """Gate timing is inconsistent (overlap, dead-time violation, window)."""


class CampaignError(OtdrError):
    """Acquisition campaign cannot proceed (e.g. unreachable target rate)."""


class StitchError(OtdrError):
    """Partial traces cannot be aligned."""


class ComparisonError(OtdrError):
    """Two configurations cannot be compared."""


class ConfigError(OtdrError):
    """Invalid configuration file or value.

    ``line``/``column`` are set for parse errors.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


class ValidityWarning(UserWarning):
    """A formula is evaluated outside its stated validity range."""
