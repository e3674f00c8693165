"""Fractional p-Laplacian on the Heisenberg group."""
import os

# the bundled TBB is too old for numba; fall back to OpenMP/workqueue quietly
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
