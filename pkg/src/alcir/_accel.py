"""Numba switch.

Set ``ALCIR_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels,
e.g. for debugging or on platforms without an LLVM toolchain.
"""

import os

_FLAG = os.environ.get("ALCIR_DISABLE_NUMBA", "").strip().lower()

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _njit = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if _njit is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _njit(*args, **kwargs)
