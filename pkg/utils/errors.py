"""
Exception hierarchy
Every error carries the CLI exit code it maps to
"""
from typing import List, Optional

from utils.constants import EXIT_INPUT_ERROR, EXIT_INTERNAL, EXIT_METHOD_FAILURE


class EivError(Exception):
    """Base class for all errors raised by the estimation library."""
    exit_code = EXIT_INTERNAL


# ============================================
# INPUT ERRORS (exit 1)
# ============================================
class InputError(EivError, ValueError):
    exit_code = EXIT_INPUT_ERROR


class EmptyData(InputError):
    pass


class NonpositiveBandwidth(InputError):
    pass


class TooFewObservations(InputError):
    pass


class LengthMismatch(InputError):
    pass


class InvalidSpec(InputError):
    pass


class LabelNotFound(InputError):
    pass


class OutOfRange(InputError):
    pass


class DegenerateData(InputError):
    pass


class NonMonotoneMarginal(InputError):
    pass


class MalformedInput(InputError):
    """Unparseable input file; row and column point at the first bad cell."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(InputError):
    """RunConfig failed schema validation."""

    def __init__(self, problems: List[str]):
        super().__init__("Invalid config: " + "; ".join(problems))
        self.problems = list(problems)


# ============================================
# METHOD FAILURES (exit 2)
# ============================================
class MethodError(EivError):
    exit_code = EXIT_METHOD_FAILURE


class RankFailure(MethodError):
    pass


class NoValidPoints(RankFailure):
    """The rank condition fails at every grid point."""


class AnchorMasked(MethodError):
    pass


class SkedasticRangeTooSmall(MethodError):
    pass


class MaskedTarget(MethodError):
    pass


class AllRepsFailed(MethodError):
    pass


# ============================================
# NUMERICAL FAILURES (exit 3)
# ============================================
class QuadratureNotConverged(EivError):
    exit_code = EXIT_INTERNAL


# ============================================
# WARNINGS
# ============================================
class NonGeometricTaus(UserWarning):
    pass
