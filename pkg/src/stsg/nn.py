"""Parameters, a minimal module tree, and the basic layers."""
from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor; ``init`` names how :func:`init_parameters` fills it."""

    def __init__(self, shape, init="xavier", fan_in=None, fan_out=None, std=1.0, dtype=None):
        super().__init__(np.zeros(shape, dtype=dtype or T.get_default_dtype()), requires_grad=True)
        self.init = init
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.std = std
        self.name = ""


class Module:
    def named_parameters(self, prefix="") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def name_seed(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


def init_parameters(module: Module, seed: int) -> None:
    """Fill every parameter deterministically from (seed, parameter name)."""
    names = set()
    for name, p in module.named_parameters():
        if name in names:
            raise ValueError(f"duplicate parameter name {name}")
        names.add(name)
        p.name = name
        rng = name_seed(seed, name)
        if p.init == "xavier":
            bound = np.sqrt(6.0 / (p.fan_in + p.fan_out))
            values = rng.uniform(-bound, bound, size=p.shape)
        elif p.init == "zeros":
            values = np.zeros(p.shape)
        elif p.init == "ones":
            values = np.ones(p.shape)
        elif p.init == "normal":
            values = rng.normal(0.0, p.std, size=p.shape)
        else:
            raise ValueError(f"unknown init {p.init!r} for {name}")
        p.data = values.astype(p.dtype)
        p.grad = None


def cast_parameters(module: Module, dtype) -> None:
    for p in module.parameters():
        p.data = p.data.astype(dtype)
        p.grad = None


class Linear(Module):
    """y = x W^T (+ b), applied to the last axis."""

    def __init__(self, d_in, d_out, bias=True):
        self.weight = Parameter((d_out, d_in), fan_in=d_in, fan_out=d_out)
        self.bias = Parameter((d_out,), init="zeros") if bias else None

    def forward(self, x):
        y = T.matmul(x, T.transpose(self.weight))
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=None, bias=True):
        self.weight = Parameter((c_out, c_in, kernel, kernel),
                                fan_in=c_in * kernel * kernel, fan_out=c_out * kernel * kernel)
        self.bias = Parameter((c_out,), init="zeros") if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class InstanceNorm(Module):
    """Per-sample, per-channel standardization over spatial axes plus affine."""

    def __init__(self, channels, eps=1e-5):
        self.weight = Parameter((channels,), init="ones")
        self.bias = Parameter((channels,), init="zeros")
        self.eps = eps

    def forward(self, x):
        c = x.shape[1]
        shape = (1, c) + (1,) * (x.ndim - 2)
        xhat = T.normalize(x, tuple(range(2, x.ndim)), self.eps)
        return xhat * T.reshape(self.weight, shape) + T.reshape(self.bias, shape)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.weight = Parameter((dim,), init="ones")
        self.bias = Parameter((dim,), init="zeros")
        self.eps = eps

    def forward(self, x):
        return T.normalize(x, (-1,), self.eps) * self.weight + self.bias


class ConvNormAct(Module):
    def __init__(self, c_in, c_out, kernel=3, stride=1):
        self.conv = Conv2d(c_in, c_out, kernel, stride)
        self.norm = InstanceNorm(c_out)

    def forward(self, x):
        return T.relu(self.norm(self.conv(x)))
