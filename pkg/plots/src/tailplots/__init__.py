"""Offline figure generation for benchmark result CSVs."""

__version__ = "0.1.0"

from .figures import (
    DEFAULT_GROUPS,
    KINDS,
    SCHEMA_COLUMNS,
    FigureSpec,
    SchemaError,
    least_squares_slope,
    read_results,
    render,
)

__all__ = [
    "DEFAULT_GROUPS",
    "KINDS",
    "SCHEMA_COLUMNS",
    "FigureSpec",
    "SchemaError",
    "least_squares_slope",
    "read_results",
    "render",
]
