"""Exception hierarchy shared by all modules."""


class GrassfieldError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(GrassfieldError, ValueError):
    """Inputs are mutually inconsistent (sizes, generator sets, indices)."""


class ValidationError(GrassfieldError, ValueError):
    """An input violates a documented invariant (symmetry, units, schema)."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class StructuralError(GrassfieldError):
    """A derived object does not have the structure the method requires."""


class FactorizationError(GrassfieldError):
    """A matrix factorization failed its reconstruction check."""


class NumericalAbort(GrassfieldError):
    """A stochastic run exceeded its divergent-trajectory ceiling."""

    def __init__(self, message, n_excluded=0, n_total=0):
        self.n_excluded = n_excluded
        self.n_total = n_total
        super().__init__(message)
