"""Numerical verification of frequency-function bounds and backward uniqueness
for coupled parabolic PDE-ODE systems on periodic grids."""

from __future__ import annotations

__version__ = "0.1.0"

from .geometry import PRESETS, TorusGrid, build_preset  # noqa: E402

__all__ = ["PRESETS", "TorusGrid", "build_preset", "__version__"]
