"""Forecasting advected scalar fields with a learned motion field and a Gaussian warp."""

import os as _os

# must run before numpy/numba pick their thread pools
_threads = _os.environ.get("ADVCAST_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        _os.environ[_var] = _threads

from ._jit import backend, set_backend  # noqa: E402
from .exceptions import AdvcastError  # noqa: E402

__version__ = "0.1.0"

__all__ = ["AdvcastError", "__version__", "backend", "set_backend"]
