"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors
"""

# Note: This is Year, month, monotonic not year, month, day
__version__ = "2026.10.1"

from . import ambient, flow, grid, mass, spectral, stcurv, surface
from .ambient import InitialDataSet
from .grid import SphericalGrid, build_grid
from .surface import GraphSurface, geometry

__all__ = [
    "GraphSurface",
    "InitialDataSet",
    "SphericalGrid",
    "ambient",
    "build_grid",
    "flow",
    "geometry",
    "grid",
    "mass",
    "spectral",
    "stcurv",
    "surface",
]
