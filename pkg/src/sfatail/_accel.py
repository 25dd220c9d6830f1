"""Numba switch.

Set ``SFATAIL_NUMBA=0`` before import to force the pure-numpy kernels.
"""
import os

_flag = os.environ.get("SFATAIL_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _flag not in {"0", "false", "no", "off"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = NUMBA_REQUESTED and HAVE_NUMBA


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
