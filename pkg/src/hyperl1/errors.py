"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so keep the classes coarse.
"""


class HyperL1Error(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ShapeError(HyperL1Error, ValueError):
    exit_code = 2


class DomainError(HyperL1Error, ValueError):
    """An argument is outside the mathematical domain of an operation."""

    exit_code = 3


class ConfigError(HyperL1Error, ValueError):
    exit_code = 2


class CalibrationError(ConfigError):
    """Order-parameter ranges of two algorithm classes overlap."""


class NumericError(HyperL1Error, ArithmeticError):
    """A training or layout run produced non-finite values."""

    exit_code = 3

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class UsageError(HyperL1Error):
    exit_code = 2


class ArtifactIOError(HyperL1Error, OSError):
    exit_code = 4
