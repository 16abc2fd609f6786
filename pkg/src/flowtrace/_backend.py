"""Kernel backend selection: numba JIT when importable, pure numpy otherwise.

``FLOWTRACE_BACKEND`` overrides autodetection: ``numba`` (error if missing),
``numpy`` (force fallback), ``auto`` (default). Each kernel module defines a
numpy twin for every @njit kernel; `use_numba()` decides which one is exported
at import time, so the choice is process-wide.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via FLOWTRACE_BACKEND=numpy
    numba = None
    HAS_NUMBA = False

_requested = os.environ.get("FLOWTRACE_BACKEND", "auto").strip().lower()

if _requested == "numba":
    if not HAS_NUMBA:
        raise ImportError("FLOWTRACE_BACKEND=numba but numba is not installed")
    BACKEND = "numba"
elif _requested == "numpy":
    BACKEND = "numpy"
elif _requested == "auto":
    BACKEND = "numba" if HAS_NUMBA else "numpy"
else:
    raise ValueError(
        f"FLOWTRACE_BACKEND must be 'numba', 'numpy' or 'auto', got {_requested!r}"
    )


def use_numba() -> bool:
    return BACKEND == "numba"


def njit(*args, **kwargs):
    """numba.njit with caching, or a pass-through decorator on the numpy path."""
    if use_numba():
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

    def deco(fn):
        return fn

    if args and callable(args[0]):
        return args[0]
    return deco
