"""Exception types shared across the package."""


class CopulacsError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(CopulacsError, ValueError):
    """A parameter lies outside its admissible domain."""


class InsufficientDataError(CopulacsError, ValueError):
    """Too little (or degenerate) data to fit a model."""


class DimensionError(CopulacsError, ValueError):
    """Inputs disagree on dimension or shape."""


class CapabilityError(CopulacsError, NotImplementedError):
    """The request is outside the implemented capability envelope."""


class ConvergenceError(CopulacsError, RuntimeError):
    """An iterative routine failed to converge within its budget."""
