"""Backend selection for the compiled kernels.

Set ``MUMIMO_BACKEND=numpy`` to force the pure-numpy code path, or
``MUMIMO_BACKEND=numba`` to require numba. The default uses numba when it
imports cleanly and silently falls back otherwise.
"""
import os

_requested = os.environ.get("MUMIMO_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ImportError(f"MUMIMO_BACKEND must be auto, numba or numpy, got {_requested!r}")

try:
    if _requested == "numpy":
        raise ImportError
    import numba
    HAVE_NUMBA = True
except ImportError:
    if _requested == "numba":
        raise
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
