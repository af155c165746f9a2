"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
anything numeric/training-related -> 4.
"""


class SurgdurError(Exception):
    """Base class for all package errors."""


class ConfigError(SurgdurError):
    """Invalid configuration value or combination."""


class DataError(SurgdurError):
    """Malformed or unusable input data."""


class SchemaError(DataError):
    """Feature schema cannot be fitted (e.g. zero-variance numeric field)."""


class ShapeError(SurgdurError):
    """Array dimensions do not match what an operation requires."""

    def __init__(self, message, expected=None, got=None):
        super().__init__(message)
        self.expected = expected
        self.got = got


class DomainError(SurgdurError):
    """Argument outside the mathematical domain of a function."""


class TrainingError(SurgdurError):
    """Optimization failure (divergence, non-finite gradients)."""

    def __init__(self, message, layer=None, param=None):
        super().__init__(message)
        self.layer = layer
        self.param = param


class UsageError(SurgdurError):
    """API misuse, e.g. backpropagating through a consumed tape."""
