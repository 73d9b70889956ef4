"""Numba-compiled kernels.

Inner loops copy whole output rows per kernel tap so they lower to vector
moves; every output element is written by exactly one iteration, keeping
results independent of thread scheduling.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def im2col(x, kh, kw, sh, sw):
    n, c, h, w = x.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    cols = np.empty((n, c * kh * kw, ho * wo), dtype=x.dtype)
    for nc in prange(n * c):
        b = nc // c
        ch = nc % c
        for i in range(kh):
            for j in range(kw):
                row = ch * kh * kw + i * kw + j
                for oi in range(ho):
                    base = oi * wo
                    src = x[b, ch, oi * sh + i]
                    if sw == 1:
                        cols[b, row, base : base + wo] = src[j : j + wo]
                    else:
                        cols[b, row, base : base + wo] = src[j : j + sw * wo : sw]
    return cols


@njit(cache=True, parallel=True)
def col2im(cols, n, c, h, w, kh, kw, sh, sw):
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    x = np.zeros((n, c, h, w), dtype=cols.dtype)
    for nc in prange(n * c):
        b = nc // c
        ch = nc % c
        for i in range(kh):
            for j in range(kw):
                row = ch * kh * kw + i * kw + j
                for oi in range(ho):
                    base = oi * wo
                    dst = x[b, ch, oi * sh + i]
                    if sw == 1:
                        dst[j : j + wo] += cols[b, row, base : base + wo]
                    else:
                        dst[j : j + sw * wo : sw] += cols[b, row, base : base + wo]
    return x


@njit(cache=True)
def overlap_add(frames, hop, out_len):
    t, l = frames.shape
    out = np.zeros(out_len, dtype=frames.dtype)
    for i in range(t):
        s = i * hop
        out[s : s + l] += frames[i]
    return out
