"""Benchmarking toolkit for spectral ripeness and firmness classification."""

__version__ = "0.1.0"

from .errors import (
    CapacityError,
    ConfigError,
    DataError,
    DegenerateError,
    DomainError,
    IntegrityError,
    LabelError,
    ParseError,
    SchemaError,
    ShapeError,
    SpectraBenchError,
    UnsupportedError,
)

__all__ = [
    "__version__",
    "SpectraBenchError",
    "ConfigError",
    "DataError",
    "ParseError",
    "SchemaError",
    "LabelError",
    "IntegrityError",
    "DomainError",
    "CapacityError",
    "DegenerateError",
    "ShapeError",
    "UnsupportedError",
]
