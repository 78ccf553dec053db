"""Backend selection for the hot loops.

Set ``NETISAC_BACKEND=numpy`` to force the pure-numpy kernels; the default
(``numba``) compiles them with ``@njit`` when numba is importable.
"""

import os

BACKEND_ENV = "NETISAC_BACKEND"

try:
    import numba  # noqa: F401
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def numba_requested():
    return os.environ.get(BACKEND_ENV, "numba").strip().lower() != "numpy"


USE_NUMBA = HAS_NUMBA and numba_requested()


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAS_NUMBA:
        from numba import njit as _njit
        return _njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def active_backend():
    return "numba" if USE_NUMBA else "numpy"
