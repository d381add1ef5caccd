"""Exception hierarchy shared across the package."""


class NoraError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(NoraError, ValueError):
    """Array dimensions do not match the grid/plan they are used with."""


class ConfigError(NoraError, ValueError):
    """Invalid configuration value or combination."""


class CapacityError(ConfigError):
    """A generator could not satisfy its placement constraints."""


class FormatError(NoraError, IOError):
    """Container bytes are not a valid file (magic/version/checksum)."""


class NumericalError(NoraError, RuntimeError):
    """A numerical routine failed (SVD breakdown, divergence)."""


class DivergenceError(NumericalError):
    """Iterates became non-finite; the step size is too large."""


class InfeasibleEpsilonError(NumericalError):
    """No regularization weight reaches the requested residual band."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
