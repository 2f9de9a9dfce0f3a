"""Backend selection for the hot image kernels.

Every kernel has a numba ``@njit`` loop version and a vectorised numpy
version that returns identical results. ``NERVESYNTH_DISABLE_JIT=1`` (read at
import) makes numpy the default; :func:`set_backend` switches at runtime.
"""
from __future__ import annotations

import os

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _numba_njit = None
    HAVE_NUMBA = False

_backend = "numpy" if (
    not HAVE_NUMBA
    or os.environ.get("NERVESYNTH_DISABLE_JIT", "0").lower() in ("1", "true", "yes")
) else "numba"


def njit(fn):
    if HAVE_NUMBA:
        return _numba_njit(cache=True, nogil=True)(fn)
    return fn


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name
