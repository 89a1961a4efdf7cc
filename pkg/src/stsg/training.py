"""Deterministic training / evaluation loops and the ablation driver."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import Dataset, split_indices
from .losses import LossConfig, MetricReport, evaluate, total_loss
from .network import NetworkConfig, TripleEncoderNet, build, predict
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)


class NumericAbort(RuntimeError):
    """Raised when the training loss becomes NaN or infinite."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 4
    lr: float = 5e-4
    weight_decay: float = 1e-4
    train_seed: int = 0
    checkpoint_path: Optional[str] = None
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    loss: LossConfig = field(default_factory=LossConfig)

    @property
    def fractions(self):
        return (self.train_frac, self.val_frac, self.test_frac)

    def validate(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr < 0:
            raise ValueError(f"lr must be nonnegative, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if min(self.fractions) < 0 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be nonnegative and sum to 1, got {self.fractions}")
        self.loss.validate()
        return self


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mean_dice: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_dice: float = -math.inf

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_mean_dice"]
        lines += [f"{r.epoch},{r.train_loss!r},{r.val_mean_dice!r}" for r in self.records]
        return "\n".join(lines) + "\n"


def _snapshot(model):
    return {name: p.data.copy() for name, p in model.named_parameters()}


def _restore(model, snap):
    for name, p in model.named_parameters():
        p.data = snap[name].copy()
        p.grad = None


def _diagnostic(model, epoch, batch):
    norms = {name: float(np.linalg.norm(p.data)) for name, p in model.named_parameters()}
    worst = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:5]
    bad = [n for n, v in norms.items() if not math.isfinite(v)]
    return (f"non-finite loss at epoch {epoch}, batch {batch}; "
            f"non-finite parameters: {bad[:5] or 'none'}; largest norms: "
            + ", ".join(f"{n}={v:.3g}" for n, v in worst))


def train_step(model, images, labels, state: AdamState, loss_cfg: LossConfig) -> float:
    params = model.parameters()
    for p in params:
        p.grad = None
    try:
        logits = model(T.Tensor(images.astype(model.cfg.dtype)))
        loss = total_loss(logits, labels, loss_cfg)
    except T.NonFiniteError:
        return math.nan
    value = loss.item()
    if not math.isfinite(value):
        return value
    loss.backward()
    adam_step(params, state)
    return value


def evaluate_model(model, ds: Dataset, batch_size=8) -> MetricReport:
    return evaluate(predict(model, ds.images, batch_size), ds.labels)


def train(model: TripleEncoderNet, data: Dataset, cfg: TrainConfig, val: Optional[Dataset] = None) -> TrainLog:
    """Epoch loop with seeded shuffling; the model ends holding its best-validation weights.

    ``data`` is the training set; ``val`` defaults to ``data`` itself when omitted.
    The best-validation weights are written to ``cfg.checkpoint_path`` when set.
    """
    cfg.validate()
    if len(data) == 0:
        raise ValueError("training set is empty")
    val = data if val is None or len(val) == 0 else val
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.train_seed)
    log = TrainLog()
    best = None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = np.sort(order[start:start + cfg.batch_size])
            value = train_step(model, data.images[idx], data.labels[idx], state, cfg.loss)
            if not math.isfinite(value):
                raise NumericAbort(_diagnostic(model, epoch, b))
            losses.append(value)
        val_dice = evaluate_model(model, val).mean
        record = EpochRecord(epoch, float(np.mean(losses)), val_dice)
        log.records.append(record)
        logger.info("epoch %d train_loss %.4f val_mean_dice %.4f", epoch, record.train_loss, val_dice)
        if val_dice > log.best_val_dice:
            log.best_val_dice = val_dice
            log.best_epoch = epoch
            best = _snapshot(model)
            if cfg.checkpoint_path:
                save_checkpoint(cfg.checkpoint_path, model)
    _restore(model, best)
    return log


def overfit(model, sample_image, sample_labels, steps, lr=5e-4, weight_decay=0.0, loss_cfg=None):
    """Repeatedly fit one sample; returns the loss after every step."""
    state = AdamState(lr=lr, weight_decay=weight_decay)
    loss_cfg = loss_cfg or LossConfig()
    images = np.asarray(sample_image)[None]
    labels = np.asarray(sample_labels)[None]
    return [train_step(model, images, labels, state, loss_cfg) for _ in range(steps)]


@dataclass
class RunResult:
    net: NetworkConfig
    log: TrainLog
    test_report: MetricReport
    num_parameters: int


def train_and_evaluate(net_cfg: NetworkConfig, train_cfg: TrainConfig, ds: Dataset) -> RunResult:
    tr, va, te = split_indices(len(ds), train_cfg.fractions)
    model = build(net_cfg)
    log = train(model, ds.subset(tr), train_cfg, ds.subset(va))
    report = evaluate_model(model, ds.subset(te))
    return RunResult(net_cfg, log, report, model.num_parameters())


ABLATION_SETTINGS = (
    ("ours", {}),
    ("w/o", {"ablate_stage1_cross": True}),
    ("w/o decoder", {"ablate_decoder_cross": True}),
)


def ablation_configs(base: NetworkConfig) -> list:
    """(setting name, config) for the baseline and the two cross-attention ablations."""
    base = replace(base, ablate_stage1_cross=False, ablate_decoder_cross=False)
    return [(name, replace(base, **flags)) for name, flags in ABLATION_SETTINGS]


def run_ablation(base_cfg: NetworkConfig, train_cfg: TrainConfig, ds: Dataset) -> dict:
    """Train all three settings on identical data and seeds; returns name -> RunResult."""
    return {name: train_and_evaluate(cfg, train_cfg, ds) for name, cfg in ablation_configs(base_cfg)}


def ablation_csv(results: dict) -> str:
    lines = []
    for i, (name, res) in enumerate(results.items()):
        lines.append(res.test_report.to_csv(header=(i == 0), label=name))
    return "".join(lines)
