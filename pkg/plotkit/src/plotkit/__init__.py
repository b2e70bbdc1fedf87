"""Figure rendering for run records produced by the estimation toolkit.

The package consumes only the versioned `records.csv` files written by the
runner; it never imports the simulation code and never mutates run outputs.
"""

from .figures import (
    FIGURE_KINDS,
    PRESET_FIGURES,
    FigureSpec,
    RecordsError,
    load_records,
    load_spec,
    preset_spec,
    render,
)

__all__ = [
    "FIGURE_KINDS",
    "PRESET_FIGURES",
    "FigureSpec",
    "RecordsError",
    "load_records",
    "load_spec",
    "preset_spec",
    "render",
]
