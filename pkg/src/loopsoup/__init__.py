"""Poisson loop-soup percolation on Z^d: samplers, clusters, estimators and exact oracles."""
from __future__ import annotations

__version__ = "0.1.0"

from .lattice import Box, Slab, Window
from .loop_model import BasedLoop, IntensityFunction, Loop
from .sampler import SoupRealization, sample_truncated, sample_window

__all__ = ["Box", "Slab", "Window", "BasedLoop", "Loop", "IntensityFunction", "SoupRealization",
           "sample_truncated", "sample_window", "__version__"]
