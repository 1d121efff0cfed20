"""Exception types shared across the package.

Each class maps to one process exit code so the command line tool can
translate failures uniformly (see ``tsae.cli``).
"""


class TsaeError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1


class DataError(TsaeError):
    """Malformed input data: unreadable CSV, bad checkpoint file, missing columns."""

    exit_code = 2


class NumericalError(TsaeError):
    """A computation produced NaN or infinity, or diverged."""

    exit_code = 3


class ShapeError(TsaeError):
    """Array dimensions disagree with what the configuration requires."""

    exit_code = 4


class ConfigError(TsaeError):
    """Invalid or inconsistent configuration values."""

    exit_code = 4
