"""Exception hierarchy.

The CLI maps these onto process exit codes (config 2, data 3, numerical 4).
"""


class ArbitrageError(Exception):
    """Base class for every error raised by this package."""


class FeasibilityError(ArbitrageError, ValueError):
    """A dispatch decision would violate a storage constraint."""


class CurveError(ArbitrageError, ValueError):
    """Malformed marginal value curve or out-of-range state of charge."""


class ConfigError(ArbitrageError, ValueError):
    exit_code = 2


class DataError(ArbitrageError, ValueError):
    exit_code = 3


class NumericalError(ArbitrageError, ArithmeticError):
    exit_code = 4


class CalibrationError(NumericalError):
    """Noise calibration could not bracket the requested R^2."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket
