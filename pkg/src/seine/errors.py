"""Exception hierarchy shared across the package.

DataError maps to exit code 2 in the CLI (bad inputs, failed validation),
TrainingError to exit code 3 (runtime failures like a non-finite loss).
"""


class SeineError(Exception):
    pass


class DataError(SeineError):
    """Invalid input data, file format, or graph validation failure."""


class ConfigError(DataError):
    """Bad config file contents (unknown key, type error)."""


class TrainingError(SeineError):
    """Runtime failure during training (e.g. non-finite loss)."""
