"""Hot loops with a numba path and a pure-numpy path.

The active implementation is chosen once at import from ``PCQA_DISABLE_NUMBA``;
both variants stay importable for benchmarking and cross-checks.
"""
from .._accel import HAS_NUMBA, backend
from .eigen import (
    neighborhood_eigenvalues_numba,
    neighborhood_eigenvalues_numpy,
    sym3_eigenvalues_numpy,
)
from .raster import splat_numba, splat_numpy
from .smo import smo_numba, smo_numpy

if HAS_NUMBA:
    neighborhood_eigenvalues = neighborhood_eigenvalues_numba
    splat = splat_numba
    smo = smo_numba
else:
    neighborhood_eigenvalues = neighborhood_eigenvalues_numpy
    splat = splat_numpy
    smo = smo_numpy

__all__ = [
    "HAS_NUMBA",
    "backend",
    "neighborhood_eigenvalues",
    "neighborhood_eigenvalues_numba",
    "neighborhood_eigenvalues_numpy",
    "smo",
    "smo_numba",
    "smo_numpy",
    "splat",
    "splat_numba",
    "splat_numpy",
    "sym3_eigenvalues_numpy",
]
