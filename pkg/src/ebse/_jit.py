"""Optional numba acceleration.

Kernels are written in the numpy subset numba understands. When numba is
missing, or ``EBSE_DISABLE_NUMBA`` is set to a truthy value, :func:`kernel`
returns the plain Python function and numpy does the work.
"""
import os

_FLAG = os.environ.get("EBSE_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_ENABLED = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def kernel(fn):
    """Compile ``fn`` with ``numba.njit`` if acceleration is enabled.

    The undecorated function is always reachable as ``fn.py_func`` so callers
    (and the benchmark) can pick either path explicitly.
    """
    if not NUMBA_ENABLED:
        fn.py_func = fn
        return fn
    return numba.njit(cache=True)(fn)
