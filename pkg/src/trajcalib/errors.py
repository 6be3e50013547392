"""Exception types shared across the calibration pipeline."""


class TrajcalibError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(TrajcalibError):
    """A linear solve failed (non positive definite system).

    Attributes:
        block_index: index of the 9x9 state block where the banded
            factorization broke down, or -1 if unknown.
    """

    def __init__(self, message: str, block_index: int = -1):
        super().__init__(message)
        self.block_index = block_index


class OutOfSupportError(TrajcalibError):
    """A query time lies outside the trajectory's knot interval."""


class InsufficientOverlapError(TrajcalibError):
    """Too few anchor knots map into the other trajectory's support."""


class InsufficientCorrespondencesError(TrajcalibError):
    """Fewer than three time-aligned point pairs are available."""


class DegenerateGeometryError(TrajcalibError):
    """Correspondence geometry does not determine a unique rotation."""


class ParseError(TrajcalibError):
    """A trajectory file row could not be parsed.

    Attributes:
        line: 1-based line number of the offending row.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(TrajcalibError):
    """Parsed data violates a format invariant."""
