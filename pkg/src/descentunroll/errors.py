"""Shared exception types."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values or diverged."""


class FileFormatError(ValueError):
    """A binary artifact (dataset, checkpoint) failed validation."""


class ConfigError(ValueError):
    """A config file or CLI option is invalid."""
