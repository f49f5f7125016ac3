"""Numba switch.

Set ``KGAE_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. for
debugging or on platforms without numba.
"""
import os

_flag = os.environ.get("KGAE_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_ENABLED = numba is not None and _flag not in ("1", "true", "yes", "on")


def njit(fn):
    """``numba.njit(cache=True)`` when enabled, otherwise ``fn`` untouched."""
    if not NUMBA_ENABLED:
        return fn
    return numba.njit(cache=True)(fn)
