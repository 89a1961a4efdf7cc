# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: radix-2 butterflies and convolution patch gathering.

Mirrors ``_kernels_py`` exactly (same twiddle tables, same operation order),
so the two backends are interchangeable.
"""
import numpy as np

ctypedef fused real_t:
    float
    double


def fft_rows(double complex[:, ::1] z, const Py_ssize_t[::1] rev, const double complex[::1] tw):
    """In-place unnormalized radix-2 DIT FFT of every row of ``z``.

    ``rev`` is the bit-reversal permutation and ``tw`` holds the ``n // 2``
    twiddles ``exp(sign * 2j*pi*k/n)``; the sign selects forward or inverse.
    """
    cdef Py_ssize_t rows = z.shape[0]
    cdef Py_ssize_t n = z.shape[1]
    cdef Py_ssize_t r, i, j, m, mh, step, start, k
    cdef double complex u, v, w, tmp
    with nogil:
        for r in range(rows):
            for i in range(n):
                j = rev[i]
                if j > i:
                    tmp = z[r, i]
                    z[r, i] = z[r, j]
                    z[r, j] = tmp
            m = 2
            while m <= n:
                mh = m // 2
                step = n // m
                start = 0
                while start < n:
                    for k in range(mh):
                        w = tw[k * step]
                        u = z[r, start + k]
                        v = z[r, start + k + mh] * w
                        z[r, start + k] = u + v
                        z[r, start + k + mh] = u - v
                    start += m
                m *= 2


cdef inline void _valid_range(Py_ssize_t j, int stride, int pad, Py_ssize_t w, Py_ssize_t wo,
                              Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output columns ox with 0 <= ox*stride - pad + j < w
    cdef Py_ssize_t a = pad - j
    lo[0] = (a + stride - 1) // stride if a > 0 else 0
    hi[0] = (w - 1 + pad - j) // stride + 1 if w - 1 + pad - j >= 0 else 0
    if hi[0] > wo:
        hi[0] = wo
    if lo[0] > hi[0]:
        lo[0] = hi[0]


def im2col(const real_t[:, :, :, ::1] x, int kh, int kw, int stride, int pad,
           int ho, int wo, real_t[:, :, ::1] cols):
    """Fill ``cols`` (N, C*kh*kw, ho*wo) with zero-padded patches of ``x``."""
    cdef Py_ssize_t n_batch = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, row, base, lo, hi, off
    with nogil:
        for n in range(n_batch):
            for c in range(c_in):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        _valid_range(j, stride, pad, w, wo, &lo, &hi)
                        off = j - pad
                        for oy in range(ho):
                            base = oy * wo
                            iy = oy * stride - pad + i
                            if iy < 0 or iy >= h:
                                for ox in range(wo):
                                    cols[n, row, base + ox] = 0
                                continue
                            for ox in range(lo):
                                cols[n, row, base + ox] = 0
                            for ox in range(lo, hi):
                                cols[n, row, base + ox] = x[n, c, iy, ox * stride + off]
                            for ox in range(hi, wo):
                                cols[n, row, base + ox] = 0


def col2im(const real_t[:, :, ::1] cols, int kh, int kw, int stride, int pad,
           int ho, int wo, real_t[:, :, :, ::1] out):
    """Scatter-add patch columns back onto ``out`` (N, C, H, W); adjoint of im2col."""
    cdef Py_ssize_t n_batch = out.shape[0], c_in = out.shape[1]
    cdef Py_ssize_t h = out.shape[2], w = out.shape[3]
    cdef Py_ssize_t n, c, i, j, oy, ox, iy, row, base, lo, hi, off
    with nogil:
        for n in range(n_batch):
            for c in range(c_in):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        _valid_range(j, stride, pad, w, wo, &lo, &hi)
                        off = j - pad
                        for oy in range(ho):
                            iy = oy * stride - pad + i
                            if iy < 0 or iy >= h:
                                continue
                            base = oy * wo
                            for ox in range(lo, hi):
                                out[n, c, iy, ox * stride + off] += cols[n, row, base + ox]
