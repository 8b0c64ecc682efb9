"""Exception hierarchy shared across the package.

Plain ``ValueError`` is used for bad arguments (shape mismatches, out-of-range
parameters); the classes below mark conditions the CLI maps to distinct exit
codes.
"""


class LenctlError(Exception):
    """Base class for package-specific failures."""


class ConfigError(LenctlError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(LenctlError):
    """Malformed or unusable input data (CLI exit code 3)."""


class NumericError(LenctlError):
    """Non-finite values where finite ones are required (CLI exit code 4)."""
