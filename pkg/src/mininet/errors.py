"""Shared exception hierarchy. Each class maps to one CLI exit code."""


class MiniNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MiniNetError, ValueError):
    """Tensor shapes inconsistent with an operation's contract."""


class ConfigError(MiniNetError):
    """Bad configuration file, unknown key, or invalid value. Exit code 2."""


class DataError(MiniNetError):
    """Missing or undecodable dataset record, bad manifest. Exit code 3."""


class NumericError(MiniNetError):
    """Non-finite loss or gradient encountered during training. Exit code 4."""


class CheckpointError(MiniNetError):
    """Unreadable, incompatible or truncated checkpoint file. Exit code 5."""
