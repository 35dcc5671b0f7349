"""Exception taxonomy shared by every module.

The CLI maps these onto process exit codes: UsageError (and its
subclasses) -> 1, DataError / FormatError -> 2, NumericError -> 3.
"""


class AvparseError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class UsageError(AvparseError):
    """Caller misuse: bad flag combinations, wrong stage tags, bad arguments."""

    exit_code = 1


class ConfigError(UsageError):
    """Invalid configuration value (e.g. head count not dividing the model dim)."""


class DimensionError(UsageError):
    """Tensor shape mismatch. The message always carries both shapes."""


class DataError(AvparseError):
    """Invalid data content: non-binary labels, missing videos, overlapping spans."""

    exit_code = 2


class FormatError(DataError):
    """Corrupt or incompatible file: bad magic, truncation, version mismatch."""


class NumericError(AvparseError):
    """Non-finite value produced where finite values are required."""

    exit_code = 3
