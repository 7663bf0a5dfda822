"""Exception hierarchy shared by the library and the command line."""


class LongmedError(Exception):
    """Base class for all errors raised by longmed."""


class ValidationError(LongmedError, ValueError):
    """Input data or configuration violates a documented invariant."""


class NumericalError(LongmedError, ArithmeticError):
    """A linear-algebra step failed (singular system, non-PD covariance)."""
