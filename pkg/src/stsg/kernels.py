"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``STSG_PURE_PYTHON=1`` is set, the numpy fallback is used.
Both expose ``fft_rows``, ``im2col`` and ``col2im`` with identical contracts.
"""
import os
from functools import lru_cache

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("STSG_PURE_PYTHON", "") == "1":
        raise ImportError("pure-python backend forced")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

_active = "compiled" if _compiled is not None else "python"


def backend_name():
    return _active


def set_backend(name):
    """Switch the active kernel backend ("compiled" or "python")."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    _active = name


def _impl(backend=None):
    return BACKENDS[backend or _active]


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def fft_tables(n, inverse):
    """Bit-reversal permutation and half-length twiddle table for size ``n``."""
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for i in range(n):
        rev[i] = int(format(i, f"0{bits}b")[::-1], 2) if bits else 0
    sign = 1.0 if inverse else -1.0
    k = np.arange(max(n // 2, 1))
    tw = np.exp(sign * 2j * np.pi * k / n).astype(np.complex128)
    rev.setflags(write=False)
    tw.setflags(write=False)
    return rev, tw


def fft_last_axis(z, inverse=False, backend=None):
    """Unnormalized radix-2 FFT along the last axis; returns a new complex128 array.

    The inverse direction flips the twiddle sign but does not divide by n.
    """
    n = z.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length {n} is not a power of two")
    out = np.array(z, dtype=np.complex128, order="C", copy=True)
    if n == 1:
        return out
    rev, tw = fft_tables(n, bool(inverse))
    _impl(backend).fft_rows(out.reshape(-1, n), rev, tw)
    return out


def im2col(x, kh, kw, stride, pad, backend=None):
    """Patch matrix of ``x`` (N, C, H, W) -> (N, C*kh*kw, Ho*Wo) plus (Ho, Wo)."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    x = np.ascontiguousarray(x)
    cols = np.empty((n, c * kh * kw, ho * wo), dtype=x.dtype)
    _impl(backend).im2col(x, kh, kw, stride, pad, ho, wo, cols)
    return cols, (ho, wo)


def col2im(cols, shape, kh, kw, stride, pad, ho, wo, backend=None):
    """Adjoint of :func:`im2col`: scatter-add columns into a fresh (N, C, H, W) array."""
    out = np.zeros(shape, dtype=cols.dtype)
    _impl(backend).col2im(np.ascontiguousarray(cols), kh, kw, stride, pad, ho, wo, out)
    return out
