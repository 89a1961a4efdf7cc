"""Flat ``key=value`` configuration shared by every CLI command.

Keys map one-to-one onto fields of NetworkConfig, TrainConfig, SynthConfig
and LossConfig. Blank lines and ``#`` comments are ignored; later assignments
of the same key win. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .data import SynthConfig
from .losses import LossConfig
from .network import NetworkConfig
from .training import TrainConfig

SEED_ENV = "STSG_SEED"

KEY_HELP = {
    # network
    "input_size": "network input extent S (power of two, >= 16)",
    "base_width": "level-1 channel width; levels use base*{1,2,4,8}",
    "num_classes": "output classes including background",
    "heads": "attention heads in every attention module",
    "tokens": "number of learned CNN-former tokens",
    "ffc_alpha": "fraction of FFC channels on the global (spectral) path",
    "ablate_stage1_cross": "drop the CNN<->former bridges (and the then-unused former/tokens)",
    "ablate_decoder_cross": "replace decoder cross-attention with plain skip concatenation",
    "seed": "parameter initialization seed",
    "dtype": "float64 or float32",
    # training
    "epochs": "training epochs",
    "batch_size": "samples per optimizer step",
    "lr": "Adam learning rate",
    "weight_decay": "decoupled weight decay",
    "train_seed": "shuffling seed",
    "checkpoint_path": "where train writes the best-validation checkpoint",
    "train_frac": "fraction of samples used for training",
    "val_frac": "fraction of samples used for validation",
    "test_frac": "fraction of samples used for testing",
    # loss
    "lambda_dice": "weight of the soft Dice term",
    "lambda_ce": "weight of the cross-entropy term",
    "smooth_eps": "Dice smoothing constant",
    "include_background_in_dice": "include class 0 in the Dice loss",
    # synthetic data
    "size": "synthetic image extent",
    "n_samples": "number of synthetic samples",
    "top_min": "lowest first-boundary position (fraction of height)",
    "top_max": "highest first-boundary position (fraction of height)",
    "thick_min": "minimum band thickness (fraction of height)",
    "thick_max": "maximum band thickness (fraction of height)",
    "fluid_band_thick_min": "minimum ONL-ISM band thickness (fraction of height)",
    "fluid_band_thick_max": "maximum ONL-ISM band thickness (fraction of height)",
    "amp_min": "minimum shared boundary wave amplitude (fraction of height)",
    "amp_max": "maximum shared boundary wave amplitude (fraction of height)",
    "freq_min": "minimum boundary wave frequency (cycles per width)",
    "freq_max": "maximum boundary wave frequency (cycles per width)",
    "tilt_max": "maximum boundary tilt across the width (fraction of height)",
    "jitter": "per-boundary wave amplitude (fraction of height)",
    "min_gap": "minimum rows between consecutive boundaries",
    "intensities": "8 comma-separated mean intensities: background then the 7 bands",
    "fluid_intensity": "mean intensity of fluid pockets",
    "noise_sigma": "additive Gaussian noise level",
    "speckle": "multiplicative speckle strength",
    "blob_min": "minimum fluid pockets per image",
    "blob_max": "maximum fluid pockets per image",
    "blob_radius_min": "minimum pocket radius in pixels",
    "blob_radius_max": "maximum pocket radius in pixels",
    "data_seed": "synthetic data seed",
}


class ConfigError(ValueError):
    pass


def _fields(obj):
    return {f.name: f for f in dataclasses.fields(obj) if f.name != "loss"}


@dataclass
class CliConfig:
    net: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    @property
    def loss(self) -> LossConfig:
        return self.train.loss

    def sections(self):
        return (self.net, self.train, self.synth, self.train.loss)

    def owner(self, key):
        for section in self.sections():
            if key in _fields(section):
                return section
        raise ConfigError(f"unknown config key {key!r}")

    def set(self, key, raw):
        section = self.owner(key)
        current = getattr(section, key)
        default = _fields(section)[key].default
        setattr(section, key, _coerce(key, raw, current if current is not None else default))

    def validate(self):
        try:
            for section in self.sections():
                section.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def items(self):
        for section in self.sections():
            for name in _fields(section):
                yield name, getattr(section, name)

    def to_text(self) -> str:
        lines = []
        for key, value in self.items():
            if value is None:
                continue
            if isinstance(value, (tuple, list)):
                value = ",".join(repr(float(v)) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


def all_keys():
    return [key for key, _ in CliConfig().items()]


def _coerce(key, raw, like):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(float(v) for v in raw.split(","))
        return raw if raw else None
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key {key!r}") from None


def parse_lines(text):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value))
    return pairs


def load_config(path=None, overrides=(), env=None) -> CliConfig:
    """Defaults <- config file <- --set overrides <- STSG_SEED (seed, train_seed, data_seed)."""
    cfg = CliConfig()
    pairs = []
    if path is not None:
        try:
            with open(path) as fh:
                pairs += parse_lines(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value))
    for key, value in pairs:
        cfg.set(key, value)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        for key in ("seed", "train_seed", "data_seed"):
            cfg.set(key, env[SEED_ENV])
    return cfg.validate()
