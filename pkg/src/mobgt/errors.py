"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class MobgtError(Exception):
    """Base class for package errors."""


class ConfigError(MobgtError):
    """Invalid configuration value or unusable flag combination."""


class DataError(MobgtError):
    """Malformed input data, unknown ids, or broken cache files."""


class NumericError(MobgtError):
    """Non-finite values encountered during training or inference."""
