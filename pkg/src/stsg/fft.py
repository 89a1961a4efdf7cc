"""Real 2-D FFT on power-of-two grids, differentiable in both directions.

The forward transform is unnormalized and keeps the half spectrum along the
width axis (``W // 2 + 1`` columns); the inverse divides by ``H * W`` so that
``irfft2(rfft2(x)) == x``. Imaginary parts of the self-conjugate columns
(0 and W/2) are ignored by the inverse, as in the usual real-input convention.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import fft_last_axis, is_power_of_two
from .tensor import ShapeError, Tensor


@dataclass
class SpectrumTensor:
    real: Tensor
    imag: Tensor
    orig_w: int

    @property
    def shape(self):
        return self.real.shape


def _check_extents(h, w):
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise ShapeError(f"spatial extents {h}x{w} must be powers of two")


def _fft2(z, inverse=False):
    """Unnormalized complex FFT over the last two axes."""
    z = fft_last_axis(z, inverse)
    z = np.swapaxes(fft_last_axis(np.swapaxes(z, -1, -2), inverse), -1, -2)
    return z


def half_weights(w: int) -> np.ndarray:
    """Multiplicity of each half-spectrum column in the full spectrum (1 or 2)."""
    wf = w // 2 + 1
    weights = np.full(wf, 2.0)
    weights[0] = 1.0
    if w % 2 == 0:
        weights[-1] = 1.0
    return weights


def rfft2_array(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    _check_extents(h, w)
    return _fft2(x.astype(np.complex128))[..., : w // 2 + 1]


def irfft2_array(spec: np.ndarray, w: int) -> np.ndarray:
    h, wf = spec.shape[-2:]
    _check_extents(h, w)
    if wf != w // 2 + 1:
        raise ShapeError(f"half spectrum has {wf} columns, expected {w // 2 + 1} for width {w}")
    cols = np.swapaxes(fft_last_axis(np.swapaxes(spec, -1, -2), inverse=True), -1, -2)
    full = np.zeros(spec.shape[:-1] + (w,), dtype=np.complex128)
    full[..., :wf] = cols
    if w > 1:
        # Hermitian extension along the width axis
        mirror = np.conj(cols[..., 1: w - wf + 1])
        full[..., wf:] = mirror[..., ::-1]
    out = fft_last_axis(full, inverse=True).real
    return out / (h * w)


def rfft2(x: Tensor) -> SpectrumTensor:
    """Half-spectrum forward DFT over the last two axes of (N, C, H, W)."""
    h, w = x.shape[-2:]
    _check_extents(h, w)
    spec = rfft2_array(x.data)
    dtype = x.dtype
    wf = w // 2 + 1
    pad_shape = x.shape[:-1] + (w,)

    def grad_input(gr, gi):
        full = np.zeros(pad_shape, dtype=np.complex128)
        full[..., :wf] = gr - 1j * gi
        return _fft2(full).real.astype(dtype)

    # real and imag outputs share one input; each carries its own half of the rule
    re = Tensor._make(spec.real.astype(dtype), (x,),
                      lambda g: (grad_input(g, np.zeros_like(g)),), "rfft2")
    im = Tensor._make(spec.imag.astype(dtype), (x,),
                      lambda g: (grad_input(np.zeros_like(g), g),), "rfft2")
    return SpectrumTensor(re, im, w)


def irfft2(s: SpectrumTensor) -> Tensor:
    """Normalized inverse of :func:`rfft2`."""
    if s.real.shape != s.imag.shape:
        raise ShapeError(f"real/imag shapes differ: {s.real.shape} vs {s.imag.shape}")
    w = s.orig_w
    h, wf = s.real.shape[-2:]
    if wf != w // 2 + 1:
        raise ShapeError(f"half spectrum has {wf} columns, expected {w // 2 + 1} for width {w}")
    _check_extents(h, w)
    dtype = s.real.dtype
    out = irfft2_array(s.real.data + 1j * s.imag.data, w).astype(dtype)
    scale = (half_weights(w) / (h * w)).astype(np.float64)

    def backward(g):
        spec = rfft2_array(g) * scale
        return spec.real.astype(dtype), spec.imag.astype(dtype)

    return Tensor._make(out, (s.real, s.imag), backward, "irfft2")
