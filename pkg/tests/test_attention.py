import numpy as np
import pytest

from stsg.attention import (MHCA, BidirectionalFusion, FeatureTriple, flatten_map, map_cross_attention,
                            pool_factor, unflatten_map)
from stsg.nn import init_parameters
from stsg.tensor import ShapeError, Tensor


def built(module, seed=0):
    init_parameters(module, seed)
    return module


def brute_mhca(f_l, f_r, m):
    """Loop-per-head reference built from plain numpy."""
    q, k, v = f_l @ m.q.weight.data.T, f_r @ m.k.weight.data.T, f_r @ m.v.weight.data.T
    dh = m.dim // m.heads
    heads = []
    for h in range(m.heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = q[..., sl] @ np.swapaxes(k[..., sl], -1, -2) / np.sqrt(dh)
        s = np.exp(s - s.max(-1, keepdims=True))
        heads.append((s / s.sum(-1, keepdims=True)) @ v[..., sl])
    return np.concatenate(heads, -1) @ m.out.weight.data.T


@pytest.mark.parametrize("tl,tr,dim,heads", [(1, 1, 2, 1), (3, 5, 4, 2), (7, 2, 8, 4)])
def test_mhca_matches_brute_force(rng, tl, tr, dim, heads):
    m = built(MHCA(dim, heads))
    f_l, f_r = rng.standard_normal((2, tl, dim)), rng.standard_normal((2, tr, dim))
    np.testing.assert_allclose(m(Tensor(f_l), Tensor(f_r)).data, brute_mhca(f_l, f_r, m), atol=1e-10)


def test_mhca_weights_row_stochastic(rng):
    m = built(MHCA(4, 2))
    w = m.attention_weights(Tensor(rng.standard_normal((2, 3, 4)) * 10), Tensor(rng.standard_normal((2, 9, 4))))
    assert w.shape == (2, 2, 3, 9)
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)


def test_mhca_key_permutation_invariant(rng):
    m = built(MHCA(4, 2))
    f_l, f_r = rng.standard_normal((1, 3, 4)), rng.standard_normal((1, 6, 4))
    perm = rng.permutation(6)
    a = m(Tensor(f_l), Tensor(f_r)).data
    b = m(Tensor(f_l), Tensor(f_r[:, perm])).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_mhca_shape_errors(rng):
    m = built(MHCA(4, 2))
    with pytest.raises(ShapeError):
        m(Tensor(rng.standard_normal((1, 3, 4))), Tensor(rng.standard_normal((1, 3, 6))))
    with pytest.raises(ShapeError):
        MHCA(5, 2)


def test_flatten_order_and_inverse(rng):
    x = rng.standard_normal((1, 3, 2, 4))
    tokens = flatten_map(Tensor(x)).data
    np.testing.assert_array_equal(tokens[0, 1 * 4 + 2], x[0, :, 1, 2])
    np.testing.assert_array_equal(unflatten_map(Tensor(tokens), 2, 4).data, x)


def test_pool_factor_respects_budget():
    assert pool_factor(16, 16) == 1
    assert pool_factor(32, 32) == 2
    assert pool_factor(64, 64) == 4
    assert pool_factor(8, 8, budget=4) == 4


def test_map_cross_attention_keeps_shape(rng):
    m = built(MHCA(4, 2))
    out = map_cross_attention(m, Tensor(rng.standard_normal((1, 4, 32, 32))),
                              Tensor(rng.standard_normal((1, 4, 32, 32))))
    assert out.shape == (1, 4, 32, 32)


def triple(rng, c=4, s=8):
    return FeatureTriple(*(Tensor(rng.standard_normal((2, c, s, s))) for _ in range(3)))


def test_fusion_attention_term_is_sum_of_two_mhca(rng):
    m = built(BidirectionalFusion(4, 2))
    t = triple(rng)
    flat = [flatten_map(f) for f in (t.f_cnn, t.f_ffc, t.f_former)]
    want = m.cnn_ffc(flat[0], flat[1]).data + m.ffc_former(flat[1], flat[2]).data
    got = flatten_map(m.attention_term(t)).data
    np.testing.assert_array_equal(got, want)


def test_fusion_attention_zero_when_outputs_zeroed(rng):
    m = built(BidirectionalFusion(4, 2))
    m.cnn_ffc.out.weight.data[:] = 0
    m.ffc_former.out.weight.data[:] = 0
    assert not np.any(m.attention_term(triple(rng)).data)


def test_fusion_rejects_mismatched_triple(rng):
    m = built(BidirectionalFusion(4, 2))
    bad = FeatureTriple(Tensor(np.zeros((1, 4, 8, 8))), Tensor(np.zeros((1, 4, 4, 4))),
                        Tensor(np.zeros((1, 4, 8, 8))))
    with pytest.raises(ShapeError):
        m(bad)
