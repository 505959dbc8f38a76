"""Exception types raised by the smoother."""


class JmlsError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(JmlsError, ValueError):
    """An invalid model, prior, dataset or argument."""


class NumericalError(JmlsError, ArithmeticError):
    """A numerical breakdown (singular matrix, total weight underflow, ...)."""


class OracleLimitError(JmlsError, RuntimeError):
    """The exact enumeration oracle was asked to enumerate too many sequences."""


class RangeSpaceError(JmlsError, ValueError):
    """A likelihood component cannot be expressed in its range-space form."""
