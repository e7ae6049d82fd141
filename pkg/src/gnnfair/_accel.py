"""
Numba switch.

Set ``GNNFAIR_DISABLE_NUMBA=1`` to run every hot kernel through its pure-numpy
implementation instead of the jitted loop version. Useful for debugging and for
environments where numba is not importable.
"""

import os

_FLAG = os.environ.get("GNNFAIR_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


if HAVE_NUMBA:
    from numba import njit
else:  # pragma: no cover

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f

        return wrapper


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
