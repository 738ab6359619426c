"""Error taxonomy shared across the pipeline.

Every failure the package raises deliberately is one of three kinds, and the
CLI maps them to fixed exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class LctError(Exception):
    """Base class for all deliberate package errors."""

    exit_code = 1


class ConfigError(LctError):
    """Invalid configuration: unknown variant, impossible dimensions, bad flag value."""

    exit_code = 1


class DataError(LctError):
    """Malformed or insufficient input data: truncated files, missing channels, bad intervals."""

    exit_code = 2


class NumericError(LctError):
    """Non-finite values where finite arithmetic was required (overflow, NaN loss)."""

    exit_code = 3
