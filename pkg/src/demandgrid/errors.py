"""Exception hierarchy shared across the package.

ConfigError maps to CLI exit code 2, DataError (and subclasses) to exit
code 1; anything else is a bug.
"""


class DemandGridError(Exception):
    pass


class ConfigError(DemandGridError):
    """Invalid configuration: bad bounds, malformed config file, bad flags."""


class DataError(DemandGridError):
    """Invalid or degenerate data encountered at run time."""


class SchemaError(DataError):
    """Input file is missing a mandatory column."""


class GeometryError(DataError):
    """Degenerate or invalid polygon geometry."""


class DegenerateDataError(DataError):
    """Statistical input carries no usable signal (e.g. all-zero differences)."""
