"""Pure-numpy reference implementations of the hot kernels.

These are the fallback path when numba is disabled (``UNMASK_NUMBA=0``) and
the ground truth the numba kernels are checked against.
"""

import numpy as np


def im2col(x, kh, kw, sh, sw):
    """Unfold padded images into column matrices.

    Parameters
    ----------
    x : ndarray, shape (N, C, H, W)
        Input images, already padded.
    kh, kw : int
        Kernel height and width.
    sh, sw : int
        Strides.

    Returns
    -------
    cols : ndarray, shape (N, C*kh*kw, Ho*Wo)
        with Ho = (H-kh)//sh + 1, Wo = (W-kw)//sw + 1.
    """
    n, c, h, w = x.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(cols, n, c, h, w, kh, kw, sh, sw):
    """Adjoint of :func:`im2col`: scatter-add columns back into images."""
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    x = np.zeros((n, c, h, w), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            x[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += cols[:, :, i, j]
    return x


def overlap_add(frames, hop, out_len):
    """Sum frame rows into a signal at ``hop``-spaced offsets."""
    t, l = frames.shape
    out = np.zeros(out_len, dtype=frames.dtype)
    for i in range(t):
        s = i * hop
        out[s : s + l] += frames[i]
    return out
