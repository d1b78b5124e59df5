"""Kernel backend selection.

Two interchangeable implementations of the hot loops exist:

* ``numba_backend`` -- @njit compiled, the default.
* ``numpy_backend`` -- pure numpy, used when numba is unavailable or when
  the environment variable ``RMS_NUMBA`` is set to ``0``.

Set ``RMS_NUMBA=0`` to force the numpy path, ``RMS_NUMBA=1`` to require
numba (import error if it is missing).  The choice is made once, at first
use; tests and benchmarks can grab a specific backend with ``get()``.
"""

from __future__ import annotations

import os
import warnings

VCAP = 8

_active = None


def _flag() -> str:
    return os.environ.get("RMS_NUMBA", "").strip().lower()


def get(name: str):
    if name == "numpy":
        from . import numpy_backend
        return numpy_backend
    if name == "numba":
        from . import numba_backend
        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")


def active():
    """The selected backend module (cached after the first call)."""
    global _active
    if _active is None:
        flag = _flag()
        if flag in ("0", "false", "no", "off", "numpy"):
            _active = get("numpy")
        elif flag in ("1", "true", "yes", "on", "numba"):
            _active = get("numba")
        else:
            try:
                _active = get("numba")
            except ImportError:
                warnings.warn("numba unavailable, falling back to numpy kernels")
                _active = get("numpy")
    return _active


def backend_name() -> str:
    return active().name
