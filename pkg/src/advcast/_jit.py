"""Backend selection for the hot kernels.

Every kernel that matters for runtime exists twice: a numba ``@njit``
version and a pure-numpy version with identical semantics.  The numba path
is used when numba imports cleanly and ``ADVCAST_DISABLE_NUMBA`` is unset
(or ``0``).  Tests exercise both paths directly, so the flag only decides
what the public functions dispatch to.
"""

from __future__ import annotations

import os

_disabled = os.environ.get("ADVCAST_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError("numba disabled by ADVCAST_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        # bare decorator or decorator factory, mirroring numba's signature
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


USE_NUMBA = HAVE_NUMBA


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def set_backend(name: str) -> None:
    """Switch the dispatch target at runtime (``"numba"`` or ``"numpy"``)."""
    global USE_NUMBA
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        USE_NUMBA = True
    elif name == "numpy":
        USE_NUMBA = False
    else:
        raise ValueError(f"unknown backend {name!r}")
