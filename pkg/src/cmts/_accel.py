"""Numba switch.

Hot kernels are written in the numpy subset numba understands. They are
compiled with ``@njit`` when numba is importable and ``CMTS_NUMBA`` is not
set to ``0``; otherwise the same functions run as plain numpy.
"""
import os

try:
    import numba
    from numba import njit as _njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CMTS_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


def thread_count():
    """Worker cap from ``CMTS_THREADS`` (0 or unset means auto)."""
    raw = os.environ.get("CMTS_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("CMTS_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def apply_thread_cap():
    """Cap numba's worker pool at ``thread_count()``; returns the cap in force."""
    n = thread_count()
    # only touch the pool on request: starting it loads a threading layer
    if HAVE_NUMBA and int(os.environ.get("CMTS_THREADS", "0") or 0) > 0:
        n = min(n, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n)
    return n


def jit(fn):
    """Compile ``fn`` when numba is available, else return it untouched."""
    if not HAVE_NUMBA:
        return fn
    return _njit(cache=True, fastmath=False)(fn)


def select(py_fn, nb_fn):
    return nb_fn if USE_NUMBA else py_fn

