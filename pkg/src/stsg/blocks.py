"""Stage-1 encoder blocks: CNN, FFC (with Fourier unit), and the CNN-former pieces."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .attention import check_heads, flatten_map, merge_heads, scaled_attention, split_heads, unflatten_map
from .fft import SpectrumTensor, irfft2, rfft2
from .kernels import is_power_of_two
from .nn import Conv2d, ConvNormAct, InstanceNorm, LayerNorm, Linear, Module, Parameter
from .tensor import ShapeError, Tensor


def _check_channels(x, expected, what):
    if x.ndim != 4 or x.shape[1] != expected:
        raise ShapeError(f"{what} expects (N, {expected}, H, W), got {x.shape}")


def _zero(*params):
    for p in params:
        if p is not None:
            p.data = np.zeros_like(p.data)


# -- spatial branch ---------------------------------------------------------------

class CNNBlock(Module):
    """conv-norm-ReLU, conv(stride)-norm, plus residual (1x1 projection when shapes change), ReLU."""

    def __init__(self, c_in, c_out, downsample=True):
        stride = 2 if downsample else 1
        self.c_in = c_in
        self.conv1 = Conv2d(c_in, c_out, 3)
        self.norm1 = InstanceNorm(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, stride=stride)
        self.norm2 = InstanceNorm(c_out)
        self.skip = Conv2d(c_in, c_out, 1, stride=stride, padding=0) if (downsample or c_in != c_out) else None

    def forward(self, x):
        _check_channels(x, self.c_in, "cnn_block")
        h = T.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return T.relu(h + (self.skip(x) if self.skip is not None else x))


def cnn_block(x, params: CNNBlock):
    return params(x)


# -- spectral branch --------------------------------------------------------------

class FourierUnit(Module):
    """rfft2 -> [real; imag] channels -> 1x1 conv -> norm -> ReLU -> irfft2.

    ``use_norm`` and ``use_relu`` exist so tests can reduce the unit to a pure
    linear map.
    """

    def __init__(self, channels):
        self.channels = channels
        self.conv = Conv2d(2 * channels, 2 * channels, 1)
        self.norm = InstanceNorm(2 * channels)
        self.use_norm = True
        self.use_relu = True

    def forward(self, x):
        _check_channels(x, self.channels, "fourier_unit")
        h, w = x.shape[-2:]
        if not (is_power_of_two(h) and is_power_of_two(w)):
            raise ShapeError(f"fourier_unit needs power-of-two extents, got {h}x{w}")
        spec = rfft2(x)
        z = self.conv(T.concat([spec.real, spec.imag], axis=1))
        if self.use_norm:
            z = self.norm(z)
        if self.use_relu:
            z = T.relu(z)
        re, im = T.split(z, [self.channels, self.channels], axis=1)
        return irfft2(SpectrumTensor(re, im, w))


def fourier_unit(x, weights: FourierUnit):
    return weights(x)


def split_channels(channels, alpha):
    """(local, global) channel counts; local = round-half-up((1 - alpha) * channels)."""
    local = int(math.floor((1.0 - alpha) * channels + 0.5))
    return local, channels - local


class FFCBlock(Module):
    """Fast Fourier convolution block with local/global channel split.

    local_out = conv3x3(local) + conv1x1(global)
    global_out = fourier_unit(global) + conv1x1(local)
    y = ReLU(norm(concat(local_out, global_out))), then an optional
    stride-2 conv-norm-ReLU that also changes the width to ``c_out``.
    """

    def __init__(self, c_in, c_out, alpha=0.5, downsample=True):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"ffc alpha must lie in [0, 1], got {alpha}")
        self.c_in = c_in
        self.c_local, self.c_global = split_channels(c_in, alpha)
        cl, cg = self.c_local, self.c_global
        self.local_conv = Conv2d(cl, cl, 3) if cl else None
        self.global_to_local = Conv2d(cg, cl, 1, bias=False) if cl and cg else None
        self.local_to_global = Conv2d(cl, cg, 1, bias=False) if cl and cg else None
        self.fourier = FourierUnit(cg) if cg else None
        self.norm = InstanceNorm(c_in)
        if downsample or c_out != c_in:
            self.down = ConvNormAct(c_in, c_out, 3, stride=2 if downsample else 1)
        else:
            self.down = None

    def forward(self, x):
        _check_channels(x, self.c_in, "ffc_block")
        h, w = x.shape[-2:]
        if not (is_power_of_two(h) and is_power_of_two(w)):
            raise ShapeError(f"ffc_block needs power-of-two extents, got {h}x{w}")
        parts = []
        if self.c_global == 0:
            parts.append(self.local_conv(x))
        elif self.c_local == 0:
            parts.append(self.fourier(x))
        else:
            local, glob = T.split(x, [self.c_local, self.c_global], axis=1)
            parts.append(self.local_conv(local) + self.global_to_local(glob))
            parts.append(self.fourier(glob) + self.local_to_global(local))
        y = parts[0] if len(parts) == 1 else T.concat(parts, axis=1)
        y = T.relu(self.norm(y))
        return self.down(y) if self.down is not None else y


def ffc_block(x, params: FFCBlock):
    return params(x)


# -- Dynamic ReLU -------------------------------------------------------------------

K_PIECES = 2
_OFFSETS = np.array([1.0, 0.0, 0.0, 0.0])  # (a1, a2, b1, b2)
_LAMBDAS = np.array([1.0, 1.0, 0.5, 0.5])


class DynamicReLU(Module):
    """Per-channel max of two input-conditioned lines.

    A hyperfunction (global average pool -> linear -> ReLU -> linear) predicts
    residuals for (a1, a2, b1, b2); coefficients are offset + lambda * tanh(residual).
    The last linear starts at zero, so a fresh unit is exactly ReLU.
    """

    def __init__(self, channels, reduction=4):
        hidden = max(channels // reduction, 1)
        self.channels = channels
        self.fc1 = Linear(channels, hidden)
        self.fc2 = Linear(hidden, 2 * K_PIECES * channels)
        self.fc2.weight.init = "zeros"

    def coefficients(self, x):
        n = x.shape[0]
        pooled = T.mean(x, axis=(2, 3))
        raw = T.reshape(self.fc2(T.relu(self.fc1(pooled))), (n, self.channels, 2 * K_PIECES))
        lam = _LAMBDAS.astype(x.dtype)
        return T.tanh(raw) * lam + _OFFSETS.astype(x.dtype)

    def forward(self, x):
        _check_channels(x, self.channels, "dynamic_relu")
        return dynamic_relu_apply(x, self.coefficients(x))


def dynamic_relu_apply(x: Tensor, coeffs: Tensor) -> Tensor:
    """y = max(a1*x + b1, a2*x + b2) with per-(sample, channel) coefficients (N, C, 4).

    Ties route the gradient to the first line.
    """
    n, c = x.shape[:2]
    if coeffs.shape != (n, c, 4):
        raise ShapeError(f"coefficients must be {(n, c, 4)}, got {coeffs.shape}")
    a1, a2, b1, b2 = (T.reshape(coeffs[:, :, i], (n, c, 1, 1)) for i in range(4))
    return T.maximum(a1 * x + b1, a2 * x + b2)


def dynamic_relu(x, params: DynamicReLU):
    return params(x)


# -- CNN-former pieces ----------------------------------------------------------------

class FormerSubBlock(Module):
    """Pre-norm multi-head self-attention over tokens, then a 2x feed-forward; both residual."""

    def __init__(self, dim, heads, expansion=2):
        check_heads(dim, heads)
        self.dim = dim
        self.heads = heads
        self.ln1 = LayerNorm(dim)
        self.q = Linear(dim, dim, bias=False)
        self.k = Linear(dim, dim, bias=False)
        self.v = Linear(dim, dim, bias=False)
        self.out = Linear(dim, dim, bias=False)
        self.ln2 = LayerNorm(dim)
        self.ffn1 = Linear(dim, expansion * dim)
        self.ffn2 = Linear(expansion * dim, dim)

    def zero_output(self):
        _zero(self.out.weight, self.ffn2.weight, self.ffn2.bias)

    def forward(self, tokens):
        if tokens.ndim != 3 or tokens.shape[-1] != self.dim:
            raise ShapeError(f"former expects (N, M, {self.dim}) tokens, got {tokens.shape}")
        h = self.ln1(tokens)
        ctx, _ = scaled_attention(split_heads(self.q(h), self.heads),
                                  split_heads(self.k(h), self.heads),
                                  split_heads(self.v(h), self.heads))
        tokens = tokens + self.out(merge_heads(ctx))
        return tokens + self.ffn2(T.relu(self.ffn1(self.ln2(tokens))))


def former_sub_block(tokens, params: FormerSubBlock):
    return params(tokens)


class CNNToFormer(Module):
    """Tokens query the feature map; keys and values are the raw feature vectors."""

    def __init__(self, dim, heads):
        check_heads(dim, heads)
        self.dim = dim
        self.heads = heads
        self.q = Linear(dim, dim, bias=False)
        self.out = Linear(dim, dim, bias=False)

    def zero_output(self):
        _zero(self.out.weight)

    def attend(self, features, tokens):
        if features.shape[1] != self.dim or tokens.shape[-1] != self.dim:
            raise ShapeError(f"cnn_to_former dim {self.dim} does not match features {features.shape} "
                             f"and tokens {tokens.shape}")
        kv = split_heads(flatten_map(features), self.heads)
        ctx, weights = scaled_attention(split_heads(self.q(tokens), self.heads), kv, kv)
        return tokens + self.out(merge_heads(ctx)), weights

    def forward(self, features, tokens):
        return self.attend(features, tokens)[0]


def cnn_to_former(features, tokens, params: CNNToFormer):
    return params(features, tokens)


class FormerToCNN(Module):
    """Feature positions query the tokens; tokens get key and value projections."""

    def __init__(self, dim, heads):
        check_heads(dim, heads)
        self.dim = dim
        self.heads = heads
        self.k = Linear(dim, dim, bias=False)
        self.v = Linear(dim, dim, bias=False)
        self.out = Linear(dim, dim, bias=False)

    def zero_output(self):
        _zero(self.out.weight)

    def attend(self, tokens, features):
        if features.shape[1] != self.dim or tokens.shape[-1] != self.dim:
            raise ShapeError(f"former_to_cnn dim {self.dim} does not match features {features.shape} "
                             f"and tokens {tokens.shape}")
        h, w = features.shape[-2:]
        q = split_heads(flatten_map(features), self.heads)
        ctx, weights = scaled_attention(q, split_heads(self.k(tokens), self.heads),
                                        split_heads(self.v(tokens), self.heads))
        return features + unflatten_map(self.out(merge_heads(ctx)), h, w), weights

    def forward(self, tokens, features):
        return self.attend(tokens, features)[0]


def former_to_cnn(tokens, features, params: FormerToCNN):
    return params(tokens, features)


class CNNSubBlock(Module):
    """conv3x3(stride)-norm-DynReLU, then a residual pointwise MLP with a DynReLU between its layers."""

    def __init__(self, c_in, c_out, downsample=True):
        self.c_in = c_in
        self.conv = Conv2d(c_in, c_out, 3, stride=2 if downsample else 1)
        self.norm = InstanceNorm(c_out)
        self.act1 = DynamicReLU(c_out)
        self.mlp1 = Conv2d(c_out, 2 * c_out, 1)
        self.act2 = DynamicReLU(2 * c_out)
        self.mlp2 = Conv2d(2 * c_out, c_out, 1)

    def forward(self, x):
        _check_channels(x, self.c_in, "cnn sub-block")
        y = self.act1(self.norm(self.conv(x)))
        return y + self.mlp2(self.act2(self.mlp1(y)))


class CNNFormerBlock(Module):
    """One encoder level of the CNN-former branch.

    Order: CNN->Former bridge, Former, Former->CNN bridge, CNN sub-block.
    With ``bridges=False`` (ablation) only the CNN sub-block remains, since
    tokens would no longer touch the feature pathway. The last level sets
    ``project_tokens=False`` because its tokens are not consumed.
    """

    def __init__(self, c_in, c_out, heads, bridges=True, downsample=True, project_tokens=True):
        self.bridges = bridges
        if bridges:
            self.to_former = CNNToFormer(c_in, heads)
            self.former = FormerSubBlock(c_in, heads)
            self.to_cnn = FormerToCNN(c_in, heads)
            self.token_proj = Linear(c_in, c_out, bias=False) if project_tokens and c_out != c_in else None
        self.cnn = CNNSubBlock(c_in, c_out, downsample)

    def forward(self, x, tokens=None):
        if self.bridges:
            tokens = self.to_former(x, tokens)
            tokens = self.former(tokens)
            x = self.to_cnn(tokens, x)
        y = self.cnn(x)
        if self.bridges and self.token_proj is not None:
            tokens = self.token_proj(tokens)
        return y, tokens


def learned_tokens(count, dim):
    return Parameter((count, dim), init="normal", std=1.0)
