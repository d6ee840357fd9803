"""Optional numba acceleration.

Kernels decorated with :func:`maybe_njit` are compiled with numba when it is
importable and ``IMTS_MIXER_DISABLE_NUMBA`` is unset (or ``0``). Otherwise the
pure-numpy implementations registered next to them are used.
"""
import logging
import os

_FLAG = "IMTS_MIXER_DISABLE_NUMBA"


def _numba_requested():
    return os.environ.get(_FLAG, "0").strip().lower() in ("", "0", "false", "no")


try:
    import numba

    logging.getLogger("numba").setLevel(logging.WARNING)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on the environment
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_requested()


def maybe_njit(func):
    """Compile ``func`` with numba if available, else return it unchanged.

    The undecorated Python function stays reachable as ``.py_func`` in both
    cases so tests can exercise the loop logic without the compiler.
    """
    if not HAVE_NUMBA:
        func.py_func = func
        return func
    return numba.njit(cache=True, nogil=True)(func)
