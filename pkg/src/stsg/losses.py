"""Combined soft-Dice + cross-entropy loss and per-class hard Dice evaluation."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

CLASS_NAMES = ("ILM", "NFL-IPL", "INL", "OPL", "ONL-ISM", "ISE", "OS-RPE", "Fluid")
CSV_HEADER = ",".join(CLASS_NAMES) + ",Mean"
NUM_CLASSES = len(CLASS_NAMES) + 1


class LabelRangeError(ValueError):
    pass


@dataclass
class LossConfig:
    lambda_dice: float = 1.0
    lambda_ce: float = 1.0
    smooth_eps: float = 1e-6
    include_background_in_dice: bool = False

    def validate(self):
        if self.lambda_dice < 0 or self.lambda_ce < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_dice == 0 and self.lambda_ce == 0:
            raise ValueError("lambda_dice and lambda_ce cannot both be zero")
        if not self.smooth_eps > 0:
            raise ValueError("smooth_eps must be positive")
        return self


def _check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelRangeError(f"labels must lie in [0, {num_classes}), got range "
                              f"[{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def one_hot(labels, num_classes, dtype=np.float64) -> np.ndarray:
    """(N, H, W) integer labels -> (N, C, H, W) indicator array."""
    labels = _check_labels(labels, num_classes)
    return (labels[:, None] == np.arange(num_classes).reshape(1, -1, 1, 1)).astype(dtype)


def softmax_probs(logits: Tensor) -> Tensor:
    return T.softmax(logits, axis=1)


def dice_loss(probs: Tensor, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    """1 - mean soft Dice over classes, pooled over the whole batch.

    d_c = (2 sum p_c g_c + eps) / (sum p_c + sum g_c + eps); class 0 is skipped
    unless ``include_background_in_dice``.
    """
    num_classes = probs.shape[1]
    g = one_hot(labels, num_classes, probs.dtype)
    start = 0 if cfg.include_background_in_dice else 1
    if start:
        probs = probs[:, start:]
        g = g[:, start:]
    axes = (0, 2, 3)
    eps = cfg.smooth_eps
    inter = T.sum_(probs * g, axis=axes)
    denom = T.sum_(probs, axis=axes) + g.sum(axis=axes)
    dice = (inter * 2.0 + eps) / (denom + eps)
    return 1.0 - T.mean(dice)


def ce_loss(logits: Tensor, labels) -> Tensor:
    """Mean over pixels of -log softmax at the true class (log-sum-exp form)."""
    g = one_hot(labels, logits.shape[1], logits.dtype)
    logp = T.log_softmax(logits, axis=1)
    return -T.mean(T.sum_(logp * g, axis=1))


def total_loss(logits: Tensor, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    dice = dice_loss(softmax_probs(logits), labels, cfg) if cfg.lambda_dice else None
    ce = ce_loss(logits, labels) if cfg.lambda_ce else None
    if dice is None:
        return ce * cfg.lambda_ce
    if ce is None:
        return dice * cfg.lambda_dice
    return dice * cfg.lambda_dice + ce * cfg.lambda_ce


@dataclass
class MetricReport:
    per_class_dice: dict = field(default_factory=dict)
    mean: float = 0.0

    def row(self) -> list[float]:
        return [self.per_class_dice[name] for name in CLASS_NAMES] + [self.mean]

    def to_csv(self, header=True, label=None) -> str:
        buf = io.StringIO()
        prefix = "" if label is None else "Setting,"
        if header:
            buf.write(prefix + CSV_HEADER + "\n")
        values = ",".join(f"{v:.3f}" for v in self.row())
        buf.write((f"{label}," if label is not None else "") + values + "\n")
        return buf.getvalue()


def class_dice(pred, truth, cls) -> float:
    """Hard Dice 2|A∩B| / (|A| + |B|); 1.0 when the class is absent from both."""
    a = pred == cls
    b = truth == cls
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def evaluate(predictions, truths) -> MetricReport:
    """Pooled per-class Dice over every pixel of every map, plus the foreground mean."""
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise ValueError(f"prediction shape {predictions.shape} != truth shape {truths.shape}")
    _check_labels(predictions, NUM_CLASSES)
    _check_labels(truths, NUM_CLASSES)
    scores = {name: class_dice(predictions, truths, c + 1) for c, name in enumerate(CLASS_NAMES)}
    return MetricReport(scores, math.fsum(scores.values()) / len(scores))
