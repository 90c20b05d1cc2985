"""Backend selection for the hot numeric kernels.

Kernels in :mod:`dimm.kernels` are written once, in a numba-compatible
subset of numpy, and decorated with :func:`njit`.  Setting the environment
variable ``DIMM_DISABLE_NUMBA=1`` (before import) turns the decorator into a
no-op so the very same functions run as plain numpy code.  That path is what
the benchmark compares against and is also handy under a debugger.
"""

import os

_FLAG = os.environ.get("DIMM_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    if NUMBA_DISABLED:
        raise ImportError
    import numba as _numba
    HAVE_NUMBA = True
except ImportError:
    _numba = None
    HAVE_NUMBA = False


def backend_name():
    return "numba" if HAVE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def deco(fn):
        return fn
    return deco
