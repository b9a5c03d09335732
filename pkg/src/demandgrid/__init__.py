"""demandgrid: grid-based micromobility demand imaging, time-lag ranking,
and statistically validated temporal input selection."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DegenerateDataError,
    DemandGridError,
    GeometryError,
    SchemaError,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DegenerateDataError",
    "DemandGridError",
    "GeometryError",
    "SchemaError",
    "__version__",
]
