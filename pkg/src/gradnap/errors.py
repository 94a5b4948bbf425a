"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GradNAPError(Exception):
    exit_code = 1


class ConfigError(GradNAPError):
    """Bad architecture/run configuration or inconsistent shapes."""

    exit_code = 2


class DataError(GradNAPError):
    """Dataset content problems (label misalignment, missing files)."""

    exit_code = 3


class FormatError(DataError):
    """Malformed or truncated binary/text file."""


class InputTooShortError(DataError):
    pass


class NumericError(GradNAPError):
    """Non-finite values during optimization or training."""

    exit_code = 4
