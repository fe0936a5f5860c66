"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError/ContractError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ShiftDetError(Exception):
    pass


class ContractError(ShiftDetError):
    """An operation was called with arguments violating its contract."""


class ConfigError(ShiftDetError):
    """Invalid configuration value or combination."""


class DataError(ShiftDetError):
    """Corrupt or mismatched on-disk data (checkpoints, containers, manifests)."""


class NumericError(ShiftDetError):
    """Non-finite value reached a point where it is an error state."""
