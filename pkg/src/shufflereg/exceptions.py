"""Exception hierarchy shared across the package."""


class ShuffleRegError(Exception):
    """Base class for all package-specific errors."""


class DataError(ShuffleRegError):
    """Malformed input data (CSV parse failures, bad columns)."""


class NumericalError(ShuffleRegError):
    """A numerical procedure failed (singular system, factorization)."""


class SingularDesignError(NumericalError):
    """Design matrix (possibly weighted) is rank deficient."""


class DegenerateWeightsError(NumericalError):
    """All observation weights vanished; weighted fit is undefined."""


class FactorizationError(NumericalError):
    """A positive-definite factorization failed beyond repair."""
