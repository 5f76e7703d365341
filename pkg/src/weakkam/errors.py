"""Exception hierarchy shared by all weakkam modules."""


class WeakKAMError(Exception):
    """Base class for all library errors."""


class InvalidArgument(WeakKAMError, ValueError):
    """An argument is outside the domain of the operation."""


class PreconditionError(WeakKAMError, ValueError):
    """A documented precondition of an operation does not hold."""


class ConvergenceFailure(WeakKAMError, RuntimeError):
    """An iterative method hit its iteration budget.

    Attributes
    ----------
    residual : float
        Last residual reached before giving up.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PropertyViolation(WeakKAMError, AssertionError):
    """A verified inequality failed beyond its numerical slack.

    The offending report (a dict) is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report if report is not None else {}


class LPFailure(WeakKAMError, RuntimeError):
    """The simplex solver could not produce an optimal vertex."""
