"""Kernel backend selection.

Set ``CONJLAB_BACKEND=numpy`` to run every hot kernel as plain Python/numpy
instead of numba-compiled code.  ``CONJLAB_THREADS`` caps the worker count
used by sample sweeps.
"""
import os
from concurrent.futures import ThreadPoolExecutor

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

BACKEND = os.environ.get("CONJLAB_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"CONJLAB_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")
USE_NUMBA = HAS_NUMBA and BACKEND == "numba"


def jit(fn):
    """njit ``fn`` when the numba backend is active, else return it unchanged."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def py_func(fn):
    """The uncompiled Python function behind a kernel."""
    return getattr(fn, "py_func", fn)


def max_workers():
    raw = os.environ.get("CONJLAB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def parallel_map(fn, items):
    """Order-preserving map, threaded when more than one worker is allowed."""
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
