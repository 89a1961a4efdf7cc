"""Multi-head cross-attention (MHCA) and the three-stream bidirectional fusion."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, InstanceNorm, Linear, Module
from .tensor import ShapeError, Tensor

TOKEN_BUDGET = 256


def split_heads(x: Tensor, heads: int) -> Tensor:
    n, t, d = x.shape
    return T.transpose(T.reshape(x, (n, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    n, h, t, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (n, t, h * dh))


def scaled_attention(q: Tensor, k: Tensor, v: Tensor):
    """softmax(q k^T / sqrt(d_head)) v over (..., T, d_head) operands.

    Returns the attended values and the attention weights.
    """
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = T.matmul(q, T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))) * scale
    weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, v), weights


def check_heads(dim: int, heads: int) -> None:
    if heads < 1 or dim % heads:
        raise ShapeError(f"model dim {dim} is not divisible by {heads} heads")


class MHCA(Module):
    """Queries from F_L, keys and values from F_R, ``heads`` parallel heads.

    All four projections are bias-free, so zeroing the value or output
    projection makes the module output exactly zero.
    """

    def __init__(self, dim, heads):
        check_heads(dim, heads)
        self.dim = dim
        self.heads = heads
        self.q = Linear(dim, dim, bias=False)
        self.k = Linear(dim, dim, bias=False)
        self.v = Linear(dim, dim, bias=False)
        self.out = Linear(dim, dim, bias=False)

    def _check(self, f_l, f_r):
        if f_l.ndim != 3 or f_r.ndim != 3:
            raise ShapeError(f"mhca expects (N, T, D) inputs, got {f_l.shape} and {f_r.shape}")
        if f_l.shape[-1] != self.dim or f_r.shape[-1] != self.dim:
            raise ShapeError(f"mhca dim {self.dim} does not match inputs {f_l.shape} and {f_r.shape}")

    def forward(self, f_l: Tensor, f_r: Tensor) -> Tensor:
        return self.attend(f_l, f_r)[0]

    def attend(self, f_l, f_r):
        self._check(f_l, f_r)
        q = split_heads(self.q(f_l), self.heads)
        k = split_heads(self.k(f_r), self.heads)
        v = split_heads(self.v(f_r), self.heads)
        ctx, weights = scaled_attention(q, k, v)
        return self.out(merge_heads(ctx)), weights

    def attention_weights(self, f_l, f_r) -> np.ndarray:
        """(N, heads, T_L, T_R) row-stochastic weight array."""
        with T.no_grad():
            return self.attend(f_l, f_r)[1].data


def mhca(f_l: Tensor, f_r: Tensor, params: MHCA) -> Tensor:
    return params(f_l, f_r)


def flatten_map(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, H*W, C); position (i, j) becomes token i*W + j."""
    n, c, h, w = x.shape
    return T.transpose(T.reshape(x, (n, c, h * w)), (0, 2, 1))


def unflatten_map(tokens: Tensor, h: int, w: int) -> Tensor:
    n, t, c = tokens.shape
    if t != h * w:
        raise ShapeError(f"cannot unflatten {t} tokens into a {h}x{w} map")
    return T.reshape(T.transpose(tokens, (0, 2, 1)), (n, c, h, w))


def pool_factor(h: int, w: int, budget: int = TOKEN_BUDGET) -> int:
    f = 1
    while (h // f) * (w // f) > budget:
        f *= 2
    return f


def pooled_tokens(x: Tensor, factor: int) -> Tensor:
    return flatten_map(T.avg_pool2d(x, factor) if factor > 1 else x)


def restore_map(tokens: Tensor, h: int, w: int, factor: int) -> Tensor:
    """Unflatten pooled tokens and resize back to (h, w) bilinearly."""
    small = unflatten_map(tokens, h // factor, w // factor)
    return T.resize_bilinear(small, h, w) if factor > 1 else small


def map_cross_attention(module: MHCA, query_map: Tensor, kv_map: Tensor,
                        budget: int = TOKEN_BUDGET) -> Tensor:
    """MHCA between two same-size feature maps, pooled to the token budget."""
    h, w = query_map.shape[-2:]
    f = pool_factor(h, w, budget)
    out = module(pooled_tokens(query_map, f), pooled_tokens(kv_map, f))
    return restore_map(out, h, w, f)


@dataclass
class FeatureTriple:
    f_cnn: Tensor
    f_ffc: Tensor
    f_former: Tensor

    def check(self):
        shapes = {self.f_cnn.shape, self.f_ffc.shape, self.f_former.shape}
        if len(shapes) != 1:
            raise ShapeError(f"feature triple shapes differ: {self.f_cnn.shape}, "
                             f"{self.f_ffc.shape}, {self.f_former.shape}")


class BidirectionalFusion(Module):
    """Fuse a FeatureTriple: norm(proj(concat) + Attn(cnn->ffc) + Attn(ffc->former))."""

    def __init__(self, channels, heads, budget=TOKEN_BUDGET):
        self.proj = Conv2d(3 * channels, channels, 1)
        self.cnn_ffc = MHCA(channels, heads)
        self.ffc_former = MHCA(channels, heads)
        self.norm = InstanceNorm(channels)
        self.budget = budget

    def attention_term(self, triple: FeatureTriple) -> Tensor:
        triple.check()
        h, w = triple.f_cnn.shape[-2:]
        f = pool_factor(h, w, self.budget)
        cnn, ffc, former = (pooled_tokens(m, f) for m in (triple.f_cnn, triple.f_ffc, triple.f_former))
        attn = self.cnn_ffc(cnn, ffc) + self.ffc_former(ffc, former)
        return restore_map(attn, h, w, f)

    def forward(self, triple: FeatureTriple) -> Tensor:
        triple.check()
        stacked = T.concat([triple.f_cnn, triple.f_ffc, triple.f_former], axis=1)
        return self.norm(self.proj(stacked) + self.attention_term(triple))


def bidirectional_fusion(triple: FeatureTriple, params: BidirectionalFusion) -> Tensor:
    return params(triple)
