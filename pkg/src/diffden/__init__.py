"""Diffusion-model density estimation on factorizable densities."""

import os

# The matrices here are small (widths <= a few hundred); threaded BLAS only
# adds spin-wait overhead, which is catastrophic on constrained VMs, and
# single-threaded kernels keep results reproducible across machines.  Set
# before numpy loads; explicit user settings win.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from ._accel import NUMBA_ENABLED, lane
from .numerics import McEstimate, Rng

__version__ = "0.1.0"

__all__ = ["NUMBA_ENABLED", "lane", "McEstimate", "Rng", "__version__"]
