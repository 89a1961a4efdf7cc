"""Triple-encoder segmentation network: assembly, forward pass, prediction."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .attention import MHCA, BidirectionalFusion, FeatureTriple, map_cross_attention
from .blocks import CNNBlock, CNNFormerBlock, FFCBlock, learned_tokens
from .kernels import is_power_of_two
from .nn import Conv2d, ConvNormAct, Module, cast_parameters, init_parameters
from .tensor import ShapeError, Tensor

LEVELS = 4
FULL_SCALE_INPUT = 224  # resolution used for the published Duke OCT runs (not power-of-two)


@dataclass
class NetworkConfig:
    input_size: int = 64
    base_width: int = 16
    num_classes: int = 9
    heads: int = 2
    tokens: int = 6
    ffc_alpha: float = 0.5
    ablate_stage1_cross: bool = False
    ablate_decoder_cross: bool = False
    seed: int = 0
    dtype: str = "float64"

    @property
    def widths(self):
        return [self.base_width * 2 ** k for k in range(LEVELS)]

    def validate(self):
        if self.input_size < 16 or not is_power_of_two(self.input_size):
            raise ValueError(f"input_size must be a power of two >= 16, got {self.input_size}")
        if self.base_width < 1:
            raise ValueError(f"base_width must be positive, got {self.base_width}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.tokens < 1:
            raise ValueError(f"tokens must be positive, got {self.tokens}")
        if self.heads < 1 or self.base_width % self.heads:
            raise ValueError(f"base_width {self.base_width} must be divisible by heads {self.heads}")
        if not 0.0 <= self.ffc_alpha <= 1.0:
            raise ValueError(f"ffc_alpha must lie in [0, 1], got {self.ffc_alpha}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        return self


class DecoderLevel(Module):
    """Upsample 2x + conv, cross-attend to the fused skip, concat, two convs."""

    def __init__(self, c_in, c_skip, heads, cross=True):
        self.up = ConvNormAct(c_in, c_skip, 3)
        self.cross = MHCA(c_skip, heads) if cross else None
        self.conv1 = ConvNormAct(2 * c_skip, c_skip, 3)
        self.conv2 = ConvNormAct(c_skip, c_skip, 3)

    def forward(self, x, skip):
        u = self.up(T.upsample_nearest(x, 2))
        if self.cross is not None:
            skip = skip + map_cross_attention(self.cross, u, skip)
        return self.conv2(self.conv1(T.concat([u, skip], axis=1)))


class TripleEncoderNet(Module):
    """CNN + FFC + CNN-former encoders, per-level fusion, cross-attention decoder.

    Level k (1..4) features have extent input_size / 2**k and width
    base_width * 2**(k-1); level 0 holds the three stems at full resolution.
    """

    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        c = cfg.widths
        chans = [c[0]] + c  # level 0 (stems) .. level 4
        self.cnn_stem = ConvNormAct(1, c[0], 3)
        self.ffc_stem = ConvNormAct(1, c[0], 3)
        self.former_stem = ConvNormAct(1, c[0], 3)
        bridges = not cfg.ablate_stage1_cross
        if bridges:
            self.tokens = learned_tokens(cfg.tokens, c[0])
        self.cnn = [CNNBlock(chans[k], chans[k + 1]) for k in range(LEVELS)]
        self.ffc = [FFCBlock(chans[k], chans[k + 1], cfg.ffc_alpha) for k in range(LEVELS)]
        self.former = [CNNFormerBlock(chans[k], chans[k + 1], cfg.heads, bridges, project_tokens=k < LEVELS - 1)
                       for k in range(LEVELS)]
        self.fusion = [BidirectionalFusion(chans[k], cfg.heads) for k in range(LEVELS + 1)]
        self.bottleneck = [ConvNormAct(c[-1], c[-1], 3), ConvNormAct(c[-1], c[-1], 3)]
        cross = not cfg.ablate_decoder_cross
        self.decoder = [DecoderLevel(chans[k + 1], chans[k], cfg.heads, cross)
                        for k in reversed(range(LEVELS))]
        self.head = Conv2d(c[0], cfg.num_classes, 1)
        self.debug = False

    def encode(self, images: Tensor) -> list[FeatureTriple]:
        """Stage 1: one FeatureTriple per level, level 0 (stems) through level 4."""
        cfg = self.cfg
        f_cnn = self.cnn_stem(images)
        f_ffc = self.ffc_stem(images)
        f_former = self.former_stem(images)
        tokens = None
        if not cfg.ablate_stage1_cross:
            n = images.shape[0]
            tokens = T.ones((n, 1, 1), dtype=images.dtype) * T.reshape(self.tokens, (1,) + self.tokens.shape)
        triples = [FeatureTriple(f_cnn, f_ffc, f_former)]
        for k in range(LEVELS):
            # the FFC stream at the same resolution feeds the CNN-former input
            former_in = f_former + f_ffc
            f_cnn = self.cnn[k](f_cnn)
            f_ffc_next = self.ffc[k](f_ffc)
            f_former, tokens = self.former[k](former_in, tokens)
            f_ffc = f_ffc_next
            triples.append(FeatureTriple(f_cnn, f_ffc, f_former))
            if self.debug:
                extent = cfg.input_size // 2 ** (k + 1)
                for f in (f_cnn, f_ffc, f_former):
                    assert f.shape[-2:] == (extent, extent), f"level {k + 1} extent {f.shape}"
        return triples

    def forward(self, images: Tensor) -> Tensor:
        cfg = self.cfg
        if images.ndim != 4 or images.shape[1] != 1:
            raise ShapeError(f"expected (N, 1, S, S) grayscale images, got {images.shape}")
        if images.shape[2:] != (cfg.input_size, cfg.input_size):
            raise ShapeError(f"expected {cfg.input_size}x{cfg.input_size} images, got {images.shape[2:]}")
        if images.dtype != np.dtype(cfg.dtype):
            images = Tensor(images.data.astype(cfg.dtype))
        triples = self.encode(images)
        fused = [self.fusion[k](t) for k, t in enumerate(triples)]
        x = fused[LEVELS]
        for layer in self.bottleneck:
            x = layer(x)
        for j, level in enumerate(self.decoder):
            x = level(x, fused[LEVELS - 1 - j])
        return self.head(x)


ModelState = TripleEncoderNet


def build(cfg: NetworkConfig) -> TripleEncoderNet:
    """Create and deterministically initialize a network for ``cfg``."""
    cfg.validate()
    model = TripleEncoderNet(cfg)
    init_parameters(model, cfg.seed)
    cast_parameters(model, np.dtype(cfg.dtype))
    return model


def forward(model: TripleEncoderNet, images) -> Tensor:
    return model(images if isinstance(images, Tensor) else Tensor(images))


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the class axis; ties go to the lowest class id."""
    return np.argmax(logits, axis=1).astype(np.int64)


def predict(model: TripleEncoderNet, images, batch_size: int = 8) -> np.ndarray:
    """Label maps (N, S, S) for images (N, 1, S, S)."""
    data = images.data if isinstance(images, Tensor) else np.asarray(images)
    out = []
    with T.no_grad():
        for start in range(0, len(data), batch_size):
            logits = model(Tensor(data[start:start + batch_size].astype(model.cfg.dtype)))
            out.append(argmax_labels(logits.data))
    return np.concatenate(out, axis=0)


def config_dict(cfg: NetworkConfig) -> dict:
    return asdict(cfg)
