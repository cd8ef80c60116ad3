"""Numba switch for the hot kernels.

Kernels are written once in numba-compatible scalar Python.  ``kernel`` returns
the compiled dispatcher when numba is importable and ``VPPWIENER_DISABLE_NUMBA``
is unset (or ``0``); otherwise the plain Python function is returned, which is
the reference fallback path.  The uncompiled original is always reachable via
the ``py_func`` attribute so both paths can be compared in one process.
"""
import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def _flag_disabled():
    value = os.environ.get("VPPWIENER_DISABLE_NUMBA", "").strip().lower()
    return value not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _flag_disabled()


def kernel(func):
    """Decorate a hot kernel, compiling it with ``numba.njit`` when enabled."""
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    func.py_func = func
    return func


def backend_name():
    return "numba" if USE_NUMBA else "python"
