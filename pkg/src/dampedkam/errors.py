"""Exception types shared across the package."""


class DampedKamError(Exception):
    """Base class for all package errors."""


class DomainError(DampedKamError, ValueError):
    """Input outside the domain of an operation (non-finite values, empty sets, grid mismatch)."""


class ConfigError(DampedKamError, ValueError):
    """Invalid run configuration."""


class ConvergenceError(DampedKamError, RuntimeError):
    """An iterative procedure did not converge.

    ``residual`` holds the last residual when one is available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class VelocityBoundError(ConvergenceError):
    """The Lax-Oleinik minimizer hit the velocity search boundary."""

    def __init__(self, message, index=None, residual=None):
        super().__init__(message, residual)
        self.index = index


class DivergenceError(ConvergenceError):
    """A trajectory left the escape radius."""


class ConsistencyError(DampedKamError, RuntimeError):
    """Two independent computations of the same quantity disagree."""
