import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stsg import kernels
from stsg import tensor as T
from stsg.fft import SpectrumTensor, half_weights, irfft2, irfft2_array, rfft2, rfft2_array
from stsg.gradcheck import check_gradients
from stsg.tensor import ShapeError, Tensor

BACKENDS = sorted(kernels.BACKENDS)


def naive_dft2(x):
    h, w = x.shape
    ky = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    kx = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return ky @ x @ kx


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = kernels.backend_name()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.mark.parametrize("shape", [(1, 1), (2, 8), (8, 2), (4, 4), (16, 32)])
def test_rfft2_matches_naive(backend, shape, rng):
    x = rng.standard_normal(shape)
    want = naive_dft2(x)[:, : shape[1] // 2 + 1]
    np.testing.assert_allclose(rfft2_array(x), want, atol=1e-9, rtol=0)


def test_fft_last_axis_inverse_roundtrip(backend, rng):
    z = rng.standard_normal((3, 64)) + 1j * rng.standard_normal((3, 64))
    back = kernels.fft_last_axis(kernels.fft_last_axis(z), inverse=True) / 64
    np.testing.assert_allclose(back, z, atol=1e-13)


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError):
        kernels.fft_last_axis(np.zeros((2, 6), dtype=complex))
    with pytest.raises(ShapeError):
        rfft2_array(np.zeros((4, 6)))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([1, 2, 4, 8, 16]), st.sampled_from([2, 4, 8, 16]), st.integers(0, 2 ** 31 - 1))
def test_roundtrip_and_parseval(h, w, seed):
    x = np.random.default_rng(seed).standard_normal((2, h, w))
    spec = rfft2_array(x)
    np.testing.assert_allclose(irfft2_array(spec, w), x, atol=1e-12)
    energy = np.sum(half_weights(w) * np.abs(spec) ** 2) / (h * w)
    assert energy == pytest.approx(np.sum(x ** 2), rel=1e-10)


def test_half_weights():
    np.testing.assert_array_equal(half_weights(8), [1, 2, 2, 2, 1])
    np.testing.assert_array_equal(half_weights(2), [1, 1])


def test_rfft2_linear_and_real_input_hermitian(rng):
    x = rng.standard_normal((4, 8))
    full = naive_dft2(x)
    np.testing.assert_allclose(full[1:, 1:], np.conj(full[:0:-1, :0:-1]), atol=1e-10)


def test_spectral_gradients(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 8)), requires_grad=True)
    proj = rng.standard_normal((1, 2, 4, 5))
    err, ops = check_gradients(lambda: T.sum_(rfft2(x).real * proj + rfft2(x).imag * proj[::-1]),
                               [x], rng, 64)
    assert err < 1e-8 and ops >= {"rfft2"}
    s = SpectrumTensor(Tensor(rng.standard_normal((1, 1, 4, 5)), requires_grad=True),
                       Tensor(rng.standard_normal((1, 1, 4, 5)), requires_grad=True), 8)
    proj2 = rng.standard_normal((1, 1, 4, 8))
    err, _ = check_gradients(lambda: T.sum_(irfft2(s) * proj2), [s.real, s.imag], rng, 64)
    assert err < 1e-8


def test_backends_agree_fft(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    z = rng.standard_normal((5, 32)) + 1j * rng.standard_normal((5, 32))
    a = kernels.fft_last_axis(z, backend="compiled")
    b = kernels.fft_last_axis(z, backend="python")
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("k,stride,pad", [(1, 1, 0), (3, 1, 1), (3, 2, 1), (3, 2, 0), (2, 2, 0)])
def test_backends_agree_im2col_col2im(rng, dtype, k, stride, pad):
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    x = rng.standard_normal((2, 3, 7, 6)).astype(dtype)
    ca, (ho, wo) = kernels.im2col(x, k, k, stride, pad, backend="compiled")
    cb, _ = kernels.im2col(x, k, k, stride, pad, backend="python")
    np.testing.assert_array_equal(ca, cb)
    g = rng.standard_normal(ca.shape).astype(dtype)
    oa = kernels.col2im(g, x.shape, k, k, stride, pad, ho, wo, backend="compiled")
    ob = kernels.col2im(g, x.shape, k, k, stride, pad, ho, wo, backend="python")
    np.testing.assert_allclose(oa, ob, rtol=1e-6 if dtype == np.float32 else 1e-13)


def test_col2im_is_adjoint_of_im2col(backend, rng):
    x = rng.standard_normal((1, 2, 5, 5))
    cols, (ho, wo) = kernels.im2col(x, 3, 3, 2, 1)
    g = rng.standard_normal(cols.shape)
    back = kernels.col2im(g, x.shape, 3, 3, 2, 1, ho, wo)
    assert np.sum(cols * g) == pytest.approx(np.sum(x * back), rel=1e-12)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.set_backend("gpu")


def direct_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w)
    return out + b.reshape(1, -1, 1, 1)


@pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (3, 2), (1, 2)])
def test_conv2d_matches_direct(backend, rng, k, stride):
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=k // 2).data
    np.testing.assert_allclose(got, direct_conv(x, w, b, stride, k // 2), atol=1e-12)
