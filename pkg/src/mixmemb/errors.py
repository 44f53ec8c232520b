"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4. Everything else is a bug and escapes as-is.
"""


class MixmembError(Exception):
    """Base class for all package errors."""


class ConfigError(MixmembError):
    """Invalid configuration value or unusable flag combination."""


class DataError(MixmembError):
    """Malformed or unusable input data (bad CSV cell, ragged row, ...)."""


class DimensionError(MixmembError):
    """Array shapes inconsistent with the declared model dimensions."""


class DomainError(MixmembError):
    """Parameter value outside its support (sigma2 <= 0, z off the simplex, ...)."""


class NumericalError(MixmembError):
    """Numerical failure during sampling or factorization."""
