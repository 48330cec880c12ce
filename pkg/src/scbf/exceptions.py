"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array or parameter structure does not have the expected shape."""


class SynchronizationError(ShapeError):
    """Client and server models have drifted out of structural agreement."""


class CapacityError(ValueError):
    """A computation would exceed a configured size limit."""


class UndefinedMetricError(ValueError):
    """A metric is mathematically undefined for the given input."""


class DataParseError(ValueError):
    """A data file cell could not be parsed."""


class SchemaError(ValueError):
    """A data file does not have the required layout."""


class ConfigError(ValueError):
    """An experiment configuration is invalid."""
