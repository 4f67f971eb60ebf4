"""Exception types raised by the library."""


class SysIdError(Exception):
    """Base class for all library errors."""


class DimensionMismatchError(SysIdError, ValueError):
    pass


class SingularCovarianceError(SysIdError, ValueError):
    """A covariance that must be inverted (or inverse-square-rooted) is numerically singular."""


class SingularGramError(SysIdError):
    """The OLS Gram matrix X^T X is numerically singular."""


class NotStrictlyStableError(SysIdError, ValueError):
    """A quantity that only exists for rho(A) < 1 was requested for a non-stable instance."""


class BurnInError(SysIdError, ValueError):
    """Raised when T is shorter than the burn-in horizon kappa(A)."""
