"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the ``UNMASK_NUMBA``
environment variable: any of ``0``, ``false``, ``no`` (case-insensitive)
selects the numpy fallback, everything else (including unset) selects the
numba path when numba imports cleanly.  ``benchmarks/bench_kernels.py``
compares the two.
"""

import os

from . import _numpy

_flag = os.environ.get("UNMASK_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no")

if _want_numba:
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a hard dep, belt and braces
        _impl = _numpy
        BACKEND = "numpy"
else:
    _impl = _numpy
    BACKEND = "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
overlap_add = _impl.overlap_add

__all__ = ["BACKEND", "im2col", "col2im", "overlap_add"]
