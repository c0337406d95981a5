"""Numba switch.

Hot loops exist twice: an ``@njit`` loop version and a vectorised numpy
version.  Set ``CASCADENET_DISABLE_NUMBA=1`` to force the numpy path (useful
for debugging and for environments without a working LLVM).
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("CASCADENET_DISABLE_NUMBA", "0").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and _FLAG not in {"1", "true", "yes", "on"}


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    return _numba.njit(*args, **kwargs)
