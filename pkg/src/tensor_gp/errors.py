"""Exception types raised across the package."""


class TensorGPError(Exception):
    """Base class for all package errors."""


class ParameterError(TensorGPError, ValueError):
    """A hyperparameter or argument is outside its valid domain."""


class DimensionError(TensorGPError, ValueError):
    """Array or tensor shapes are inconsistent."""


class ConditioningError(TensorGPError, ArithmeticError):
    """A matrix is too ill-conditioned to factorize reliably."""


class InitializationError(TensorGPError, ArithmeticError):
    """The likelihood is not finite at a starting point."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class LoadError(TensorGPError, OSError):
    """A dataset directory is missing files or holds invalid values."""


class ConfigError(TensorGPError, ValueError):
    """An experiment configuration is malformed."""
