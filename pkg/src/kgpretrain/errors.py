"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage problems exit 1,
data/file problems exit 2, numeric failures exit 3.
"""


class UsageError(Exception):
    """Bad invocation (unknown flag, missing argument)."""


class DataError(Exception):
    """Malformed or missing input data; carries file/line context in the message."""


class ConfigError(DataError):
    """Bad config file: unknown key, wrong type, or unreadable."""


class NumericError(Exception):
    """Non-finite value encountered during training or verification."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ShapeError(ValueError):
    """Tensor shape mismatch; message names both shapes."""
