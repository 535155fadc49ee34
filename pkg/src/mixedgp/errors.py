"""Exception hierarchy shared across the package.

Each subcommand of the command line maps these onto exit codes:
``ConfigError`` -> 2, ``DataError`` -> 3, ``NumericalError`` -> 4.
"""


class MixedGPError(Exception):
    """Base class for all package errors."""


class ConfigError(MixedGPError):
    """Invalid configuration, arguments, or file formats."""


class DataError(MixedGPError):
    """Invalid or inconsistent data (schemas, levels, shapes)."""


class NumericalError(MixedGPError):
    """Numerical failure (factorization breakdown, divergence)."""
