"""Exception and warning types raised across the package."""


class NiocError(Exception):
    """Base class for all package errors."""


class SingularCovariance(NiocError):
    """A covariance matrix could not be factorized, even after jitter."""


class NonFiniteValue(NiocError):
    """A user function returned NaN or inf at a probe point."""


class UnknownTask(NiocError, KeyError):
    pass


class MissingParameter(NiocError, KeyError):
    pass


class NonPositiveParameter(NiocError, ValueError):
    pass


class DivergedValueRecursion(NiocError):
    """The value-function Hessian blew up during a backward pass."""


class AllRestartsFailed(NiocError):
    pass


class NoConvergence(NiocError):
    """An iterative solver stopped before meeting its tolerance.

    The last iterate is attached as ``result`` and remains usable.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NoConvergenceWarning(UserWarning):
    pass
