"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class RoyaltyError(Exception):
    """Base class for every error raised by this package."""


class DataError(RoyaltyError, ValueError):
    """Invalid or malformed input data.

    ``line`` is the 1-based line number in the source CSV (header is line 1)
    when the error comes from a parser, otherwise ``None``.
    """

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class InsufficientHistoryError(DataError):
    pass


class PricingError(RoyaltyError, ValueError):
    pass


class DivergentPerpetuityError(PricingError):
    """A perpetual cashflow was discounted at a non-positive rate."""


class InvalidParametersError(PricingError):
    pass


class CalibrationError(RoyaltyError, ValueError):
    pass


class EmptyCohortError(RoyaltyError):
    def __init__(self, message: str, skipped: list | None = None):
        self.skipped = list(skipped or [])
        super().__init__(message)


class BenchmarkGridError(DataError):
    def __init__(self, missing: list[str]):
        self.missing = list(missing)
        super().__init__("benchmark grid is missing cells: " + ", ".join(self.missing))
