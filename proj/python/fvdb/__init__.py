"""Sparse voxel grids backed by the fvdb C++ library.

Arrays are numpy, C-contiguous. Points are float64 or float32 (N, 3);
coordinates are int32 (N, 3); features are (V, C) with the same dtype as
the points they are sampled at.
"""

from ._fvdb import (
    Grid,
    build_from_coords,
    build_from_points,
    coarsen,
    conv,
    load,
    sample,
    splat,
)



def coord_to_index(grid, coords):
    """1-based index of each int32 (N, 3) coordinate; 0 where inactive."""
    return grid.coord_to_index(coords)


__all__ = [
    "Grid",
    "coord_to_index",
    "build_from_coords",
    "build_from_points",
    "coarsen",
    "conv",
    "load",
    "sample",
    "splat",
]
