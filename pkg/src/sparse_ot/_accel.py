"""Optional numba acceleration.

Kernels are written in the numpy subset numba understands and wrapped with
:func:`maybe_njit`.  Set ``SPARSE_OT_NUMBA=0`` before import to run the plain
numpy path (useful for debugging and for the benchmark comparison).
"""
import os

_flag = os.environ.get("SPARSE_OT_NUMBA", "1").strip().lower()
_wanted = _flag not in ("0", "false", "no", "off")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = bool(_wanted and _numba is not None)


def maybe_njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if args and callable(args[0]) and len(args) == 1 and not kwargs:
        fn = args[0]
        if USE_NUMBA:
            return _numba.njit(cache=True)(fn)
        return fn

    def wrap(fn):
        if USE_NUMBA:
            kwargs.setdefault("cache", True)
            return _numba.njit(**kwargs)(fn)
        return fn

    return wrap


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def set_threads():
    """Honour SPARSE_OT_THREADS for numba's parallel layer, if set."""
    n = os.environ.get("SPARSE_OT_THREADS")
    if n and USE_NUMBA:
        _numba.set_num_threads(max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS)))
