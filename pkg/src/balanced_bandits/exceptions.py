"""Exception types raised by the library."""


class BanditError(Exception):
    """Base class for all library errors."""


class NumericalError(BanditError, ArithmeticError):
    """A factorization or solve failed."""


class SingularDesignError(NumericalError):
    """The regularized design matrix is singular (only possible with zero ridge)."""


class PolicyStateError(BanditError, RuntimeError):
    """An operation was invoked on a state that cannot support it."""


class DatasetError(BanditError, ValueError):
    """A dataset file could not be parsed or does not match the CSV contract."""
