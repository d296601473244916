"""Exception hierarchy shared by all modules."""


class SpacingError(Exception):
    """Base class for every error raised by the package."""


class DomainError(SpacingError, ValueError):
    """An argument lies outside the domain of the model (e.g. inside the hard core)."""


class InfeasibleDensityError(DomainError):
    """Requested intensity cannot be reached (at or beyond close packing)."""


class ConvergenceError(SpacingError):
    """An iterative method stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InconsistencyError(SpacingError):
    """Two routes to the same quantity disagree beyond tolerance."""


class CertificateError(InconsistencyError):
    """A minorisation certificate does not hold on the grid."""


class SearchFailure(SpacingError):
    """No minorisation certificate was found within the search budget."""

    def __init__(self, message, best_lambda=None):
        super().__init__(message)
        self.best_lambda = best_lambda


class InsufficientDataError(SpacingError):
    """Too few samples or bins for the requested statistic."""


class ConfigError(SpacingError):
    """Invalid run configuration."""
