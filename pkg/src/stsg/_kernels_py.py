"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and arithmetic order match the Cython module, so either backend
can be selected at import time without changing results.
"""
import numpy as np


def fft_rows(z, rev, tw):
    """In-place unnormalized radix-2 DIT FFT of every row of ``z``."""
    rows, n = z.shape
    z[...] = z[:, rev]
    m = 2
    while m <= n:
        mh = m // 2
        w = tw[:: n // m][:mh]
        blocks = z.reshape(rows, n // m, m)
        u = blocks[:, :, :mh].copy()
        v = blocks[:, :, mh:] * w
        blocks[:, :, :mh] = u + v
        blocks[:, :, mh:] = u - v
        m *= 2


def im2col(x, kh, kw, stride, pad, ho, wo, cols):
    """Fill ``cols`` (N, C*kh*kw, ho*wo) with zero-padded patches of ``x``."""
    n, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    view = cols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            view[:, :, i, j] = xp[:, :, i:i + stride * (ho - 1) + 1:stride,
                                  j:j + stride * (wo - 1) + 1:stride]


def col2im(cols, kh, kw, stride, pad, ho, wo, out):
    """Scatter-add patch columns back onto ``out`` (N, C, H, W)."""
    n, c, h, w = out.shape
    view = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=out.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * (ho - 1) + 1:stride,
               j:j + stride * (wo - 1) + 1:stride] += view[:, :, i, j]
    out += xp[:, :, pad:pad + h, pad:pad + w]
