"""Exception hierarchy shared across the package."""


class BhvLossError(Exception):
    """Base class for all package errors."""


class ParseError(BhvLossError, ValueError):
    """Malformed input text or config document."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class InvariantViolation(BhvLossError, ValueError):
    """A value violates a documented invariant. ``field`` names the offender."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegenerateParameter(BhvLossError, ValueError):
    pass


class InsufficientGateDrive(BhvLossError, ValueError):
    """Gate voltage cannot sustain the Miller plateau at this operating point."""


class ThermalNonConvergence(BhvLossError, RuntimeError):
    pass


class InfeasiblePoint(BhvLossError):
    """One or more grid points could not be simulated.

    ``failures`` is a list of ``(i, j, cause)`` tuples.
    """

    def __init__(self, failures):
        self.failures = list(failures)
        i, j, cause = self.failures[0]
        super().__init__(
            f"{len(self.failures)} infeasible grid point(s); first at i={i}, j={j}: "
            f"{type(cause).__name__}: {cause}"
        )


class FormatError(BhvLossError, ValueError):
    pass


class EvalDomain(BhvLossError, ArithmeticError):
    """Expression produced a non-finite value."""

    def __init__(self, point=None, node=None):
        self.point = point
        self.node = node
        super().__init__(f"non-finite value at node {node!r}, point {point!r}")


class MissingCoefficient(BhvLossError, IndexError):
    pass


class FitError(BhvLossError, ValueError):
    pass


class RankDeficient(BhvLossError, ValueError):
    pass


class ZeroReference(BhvLossError, ZeroDivisionError):
    pass


class StaleArtifact(BhvLossError):
    pass
