"""Exception hierarchy shared by every module of the toolkit."""


class SingPertError(Exception):
    """Base class for toolkit errors."""


class CurveEvaluationError(SingPertError, ValueError):
    """A comparison curve produced a value outside its contract (negative, non-finite)."""


class BracketError(SingPertError, ValueError):
    """Numeric inversion could not enclose the target value."""


class NonMonotoneError(SingPertError, ValueError):
    """A curve expected to be increasing was observed decreasing."""


class PreconditionError(SingPertError, ValueError):
    """An operation was called with inputs violating its precondition."""


class NonPositiveRateError(SingPertError, ValueError):
    """A perturbation function evaluated negative or non-finite."""


class StepUnderflowError(SingPertError, RuntimeError):
    """Adaptive step size collapsed below the allowed floor."""


class SingularSolveError(SingPertError, ArithmeticError):
    """A linear solve failed because its operator is singular or unstable."""


class ConfigError(SingPertError, ValueError):
    """Invalid scenario configuration. ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class InequalityViolationError(SingPertError, ValueError):
    """A synthesized curve fails the inequality it was built to satisfy."""
