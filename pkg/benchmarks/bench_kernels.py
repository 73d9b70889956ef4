#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs every hot kernel on training-shaped inputs with both backends and
prints a table.  Select the fallback at import time for the whole package
with ``UNMASK_NUMBA=0``; this script imports both implementations directly
so one run covers the comparison.
"""

import time

import numpy as np

from unmask.kernels import _numba, _numpy

CASES = [
    # (name, shape, kernel, stride) on float32 training-sized tensors
    ("enc 5x5 s1  (2,5,96,257)", (2, 5, 96, 257), (5, 5), (1, 1)),
    ("enc 5x5 s2  (2,8,96,257)", (2, 8, 96, 257), (5, 5), (2, 2)),
    ("res 3x3 s1  (2,36,24,65)", (2, 36, 24, 65), (3, 3), (1, 1)),
    ("cb  3x3 s13 (1,16,96,512)", (1, 16, 96, 512), (3, 3), (1, 3)),
]


def timeit(fn, *args, repeat=5):
    fn(*args)  # warm (jit compile / cache touch)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, shape, (kh, kw), (sh, sw) in CASES:
        x = rng.standard_normal(shape).astype(np.float32)
        t_np = timeit(_numpy.im2col, x, kh, kw, sh, sw)
        t_nb = timeit(_numba.im2col, x, kh, kw, sh, sw)
        print(f"im2col   {name:25s} {t_np*1e3:8.2f}ms {t_nb*1e3:8.2f}ms {t_np/t_nb:7.2f}x")

        n, c, h, w = shape
        ho = (h - kh) // sh + 1
        wo = (w - kw) // sw + 1
        cols = rng.standard_normal((n, c * kh * kw, ho * wo)).astype(np.float32)
        t_np = timeit(_numpy.col2im, cols, n, c, h, w, kh, kw, sh, sw)
        t_nb = timeit(_numba.col2im, cols, n, c, h, w, kh, kw, sh, sw)
        print(f"col2im   {name:25s} {t_np*1e3:8.2f}ms {t_nb*1e3:8.2f}ms {t_np/t_nb:7.2f}x")

    frames = rng.standard_normal((280, 512))
    t_np = timeit(_numpy.overlap_add, frames, 80, 279 * 80 + 512)
    t_nb = timeit(_numba.overlap_add, frames, 80, 279 * 80 + 512)
    print(f"{'overlap_add (280,512) hop 80':34s} {t_np*1e3:8.2f}ms {t_nb*1e3:8.2f}ms "
          f"{t_np/t_nb:7.2f}x")


if __name__ == "__main__":
    main()
