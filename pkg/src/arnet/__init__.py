"""Autoregressive dynamic network models: simulation, estimation and inference."""
from .core import (KERNEL_IDS, ParameterIndex, ParameterSet, SeriesFormatError, SnapshotSeries,
                   build_index, load_series, save_series)
from .kernels import get_kernel

__version__ = "0.1.0"

__all__ = [
    "KERNEL_IDS",
    "ParameterIndex",
    "ParameterSet",
    "SeriesFormatError",
    "SnapshotSeries",
    "build_index",
    "get_kernel",
    "load_series",
    "save_series",
]
