"""Discrete-velocity Boltzmann solver for plane Couette flow between diffuse walls."""

import os

# the TBB layer is rarely present; pick numba's portable thread pool
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
