"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class LexrelError(Exception):
    """Base class for all package errors."""


class ConfigError(LexrelError):
    """Invalid configuration or command usage."""


class DataError(LexrelError):
    """Malformed input files or inconsistent datasets."""


class NumericalError(LexrelError):
    """Non-finite values encountered during training or inference."""
