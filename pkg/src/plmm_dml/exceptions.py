"""Exception hierarchy shared by all modules.

The CLI maps :class:`DataError` to exit status 3 and :class:`NumericalError`
to exit status 4.
"""


class PlmmError(Exception):
    """Base class for all errors raised by this package."""


class DataError(PlmmError, ValueError):
    """Malformed input data (shapes, non-finite values, too few groups)."""


class LearnerError(PlmmError, ValueError):
    """A nuisance learner could not be fitted."""


class NumericalError(PlmmError, ArithmeticError):
    """A numerical procedure failed."""


class SingularDesignError(NumericalError):
    """The GLS normal matrix is not invertible."""

    def __init__(self, message, rank=None, dim=None):
        super().__init__(message)
        self.rank = rank
        self.dim = dim


class ConvergenceError(NumericalError):
    """The variance-component optimizer hit its iteration limit.

    ``best`` holds the best iterate seen, as an ``LmmFit``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FoldError(PlmmError):
    """Wraps an error raised while processing one cross-fitting fold."""

    def __init__(self, fold, cause):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold
        self.cause = cause


class ConvergenceWarning(RuntimeWarning):
    """Emitted when an estimate sits on a degenerate boundary."""
