"""Exception hierarchy shared across the package."""


class UfinError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(UfinError):
    """Tensor operands do not conform; the message reports both shapes."""


class DataError(UfinError):
    """Bad input data: missing files, malformed rows, unknown ids."""


class NumericError(UfinError):
    """Numeric failure: overflow, non-finite loss, domain violation."""


class ConfigError(UfinError):
    """Invalid configuration key, value, or combination."""
