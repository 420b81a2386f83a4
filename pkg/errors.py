# errors.py

from fastapi import status


class NormalFormError(Exception):
    """Base class for every error raised by the engine"""


# --------- Usage / input errors ---------

class PolicyMismatchError(NormalFormError, ValueError):
    pass


class UnknownVariableError(NormalFormError, ValueError):
    pass


class DimensionMismatchError(NormalFormError, ValueError):
    pass


class DegreeOverflowError(NormalFormError, ValueError):
    pass


class OrderOutOfRangeError(NormalFormError, ValueError):
    pass


class ProblemParseError(NormalFormError, ValueError):
    pass


class ProblemNotFoundError(NormalFormError, LookupError):
    pass


class EpsListError(NormalFormError, ValueError):
    pass


# --------- Mathematical errors ---------

class MathError(NormalFormError):
    """Raised when the mathematics refuses: degenerate data or lost convergence"""


class NonInvertibleSeriesError(MathError):
    pass


class DegenerateFrequencyError(MathError):
    pass


class ChartDegeneracyError(MathError):
    pass


class FixedPointError(MathError):
    pass


class InternalConsistencyError(MathError):
    pass


class EpsilonTooLargeError(MathError):
    pass


class StepSizeError(MathError):
    pass


EXIT_OK = 0
EXIT_GATE_FAILED = 1
EXIT_MATH = 2
EXIT_USAGE = 3


def exit_code_for(exc: BaseException) -> int:
    """Map an exception onto the CLI exit codes"""
    if isinstance(exc, MathError):
        return EXIT_MATH
    return EXIT_USAGE


def http_status_for(exc: BaseException) -> int:
    """Map an exception onto the HTTP status used by the routers"""
    if isinstance(exc, ProblemNotFoundError):
        return status.HTTP_404_NOT_FOUND
    if isinstance(exc, MathError):
        return status.HTTP_422_UNPROCESSABLE_ENTITY
    return status.HTTP_400_BAD_REQUEST
