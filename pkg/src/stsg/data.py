"""Synthetic OCT-like layered images, the dataset file format, and PGM/PPM helpers.

Each image is a stack of seven retinal bands under a dark background. Seven
smooth, non-crossing boundaries are drawn per image; the row-wise label is the
number of boundaries at or above the pixel centre, so labels scan 0, 1, ..., 7
down every column. Fluid pockets (class 8) are ellipses clipped to band 5.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAGIC = b"STSGDATA1\n"
NUM_LAYERS = 7
FLUID = 8
FLUID_BAND = 5
NUM_CLASSES = 9
MAX_ATTEMPTS = 1000

# background, ILM, NFL-IPL, INL, OPL, ONL-ISM, ISE, OS-RPE
DEFAULT_INTENSITIES = (0.05, 0.9, 0.62, 0.32, 0.7, 0.2, 0.55, 0.95)


class DatasetFormatError(ValueError):
    pass


class BadMagicError(DatasetFormatError):
    pass


class TruncatedDataError(DatasetFormatError):
    pass


class LabelValueError(DatasetFormatError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass
class SynthConfig:
    size: int = 64
    n_samples: int = 200
    top_min: float = 0.12         # first boundary, fraction of height
    top_max: float = 0.22
    thick_min: float = 0.05       # band thickness, fraction of height
    thick_max: float = 0.09
    fluid_band_thick_min: float = 0.09
    fluid_band_thick_max: float = 0.14
    amp_min: float = 0.01         # shared wave amplitude, fraction of height
    amp_max: float = 0.05
    freq_min: float = 0.5         # cycles per image width
    freq_max: float = 2.0
    tilt_max: float = 0.15        # total rise across the width, fraction of height
    jitter: float = 0.008         # per-boundary wave amplitude, fraction of height
    min_gap: float = 1.5          # rows between consecutive boundaries
    intensities: tuple = DEFAULT_INTENSITIES
    fluid_intensity: float = 0.02
    noise_sigma: float = 0.04
    speckle: float = 0.15
    blob_min: int = 0
    blob_max: int = 3
    blob_radius_min: float = 1.5  # pixels
    blob_radius_max: float = 4.0
    data_seed: int = 0

    def validate(self):
        if self.size < 8:
            raise ValueError(f"size must be at least 8, got {self.size}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be positive, got {self.n_samples}")
        if len(self.intensities) != NUM_LAYERS + 1:
            raise ValueError(f"intensities needs {NUM_LAYERS + 1} values (background + 7 bands)")
        if not 0 <= self.blob_min <= self.blob_max:
            raise ValueError("need 0 <= blob_min <= blob_max")
        if self.noise_sigma < 0 or self.speckle < 0:
            raise ValueError("noise_sigma and speckle must be nonnegative")
        if not 0 < self.blob_radius_min <= self.blob_radius_max:
            raise ValueError("need 0 < blob_radius_min <= blob_radius_max")
        return self


@dataclass
class Sample:
    image: np.ndarray   # (1, S, S) float32 in [0, 1]
    labels: np.ndarray  # (S, S) uint8 in [0, 9)
    blobs: int = 0


@dataclass
class Dataset:
    images: np.ndarray  # (N, 1, S, S) float32
    labels: np.ndarray  # (N, S, S) uint8
    blobs: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return Sample(self.images[i], self.labels[i], int(self.blobs[i]) if self.blobs is not None else 0)

    @property
    def size(self):
        return self.images.shape[-1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        blobs = self.blobs[idx] if self.blobs is not None else None
        return Dataset(self.images[idx], self.labels[idx], blobs)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]):
        return cls(np.stack([s.image for s in samples]).astype(np.float32),
                   np.stack([s.labels for s in samples]).astype(np.uint8),
                   np.array([s.blobs for s in samples], dtype=np.int64))


def sample_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def draw_boundaries(cfg: SynthConfig, rng) -> np.ndarray:
    """(7, S) strictly ordered boundary rows, rejection-sampled."""
    s = cfg.size
    x = np.arange(s) + 0.5
    for _ in range(MAX_ATTEMPTS):
        top = rng.uniform(cfg.top_min, cfg.top_max) * s
        thick = rng.uniform(cfg.thick_min, cfg.thick_max, size=NUM_LAYERS - 1) * s
        thick[FLUID_BAND - 1] = rng.uniform(cfg.fluid_band_thick_min, cfg.fluid_band_thick_max) * s
        base = top + np.concatenate([[0.0], np.cumsum(thick)])
        wave = rng.uniform(-0.5, 0.5) * cfg.tilt_max * s * (x / s - 0.5) * 2
        for _ in range(2):
            amp = rng.uniform(cfg.amp_min, cfg.amp_max) * s
            freq = rng.uniform(cfg.freq_min, cfg.freq_max)
            wave = wave + amp * np.sin(2 * np.pi * freq * x / s + rng.uniform(0, 2 * np.pi))
        bounds = np.empty((NUM_LAYERS, s))
        for k in range(NUM_LAYERS):
            own = np.zeros(s)
            for _ in range(2):
                freq = rng.uniform(cfg.freq_min, 2 * cfg.freq_max)
                own += cfg.jitter * s * np.sin(2 * np.pi * freq * x / s + rng.uniform(0, 2 * np.pi))
            bounds[k] = base[k] + wave + own
        gaps = np.diff(bounds, axis=0)
        if gaps.min() >= cfg.min_gap and bounds[0].min() >= 1.0 and bounds[-1].max() <= s - 2.0:
            return bounds
    raise GenerationError(f"could not draw ordered boundaries in {MAX_ATTEMPTS} attempts; "
                          "loosen thickness/amplitude settings")


def labels_from_boundaries(bounds: np.ndarray, size: int) -> np.ndarray:
    rows = np.arange(size).reshape(-1, 1) + 0.5
    return (bounds[:, None, :] <= rows[None]).sum(axis=0).astype(np.uint8)


def stamp_fluid(labels, cfg: SynthConfig, rng) -> int:
    """Stamp 0..blob_max elliptical pockets (class 8) inside band 5; returns the count."""
    s = cfg.size
    count = int(rng.integers(cfg.blob_min, cfg.blob_max + 1))
    yy, xx = np.mgrid[0:s, 0:s] + 0.5
    band = labels == FLUID_BAND
    for _ in range(count):
        cx = int(rng.integers(0, s))
        rows = np.flatnonzero(band[:, cx])
        cy = int(rows[rng.integers(0, len(rows))])
        rx = rng.uniform(cfg.blob_radius_min, cfg.blob_radius_max)
        ry = rng.uniform(cfg.blob_radius_min, cfg.blob_radius_max) * 0.6
        inside = ((xx - (cx + 0.5)) / rx) ** 2 + ((yy - (cy + 0.5)) / ry) ** 2 <= 1.0
        labels[inside & band] = FLUID
    return count


def render(labels, cfg: SynthConfig, rng) -> np.ndarray:
    table = np.array(list(cfg.intensities) + [cfg.fluid_intensity], dtype=np.float64)
    img = table[labels]
    if cfg.speckle:
        img = img * (1.0 + cfg.speckle * rng.standard_normal(img.shape))
    if cfg.noise_sigma:
        img = img + cfg.noise_sigma * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_sample(cfg: SynthConfig, index: int) -> Sample:
    rng = sample_rng(cfg.data_seed, index)
    bounds = draw_boundaries(cfg, rng)
    labels = labels_from_boundaries(bounds, cfg.size)
    blobs = stamp_fluid(labels, cfg, rng)
    image = render(labels, cfg, rng)
    return Sample(image[None], labels, blobs)


def generate_dataset(cfg: SynthConfig) -> Dataset:
    cfg.validate()
    return Dataset.from_samples([generate_sample(cfg, i) for i in range(cfg.n_samples)])


# -- splits ---------------------------------------------------------------------------

def split_indices(n, fractions=(0.6, 0.2, 0.2)):
    """Contiguous train/val/test index ranges; every index lands in exactly one split."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    idx = np.arange(n)
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


# -- file format ----------------------------------------------------------------------

def header_bytes(count, size) -> bytes:
    return MAGIC + f"count={count} size={size} classes={NUM_CLASSES}\n".encode("ascii")


def expected_file_size(count, size) -> int:
    return len(header_bytes(count, size)) + count * (size * size * 4 + size * size)


def encode_dataset(ds: Dataset) -> bytes:
    n, s = len(ds), ds.size
    if ds.labels.size and ds.labels.max() >= NUM_CLASSES:
        raise LabelValueError(f"label value {int(ds.labels.max())} >= {NUM_CLASSES}")
    parts = [header_bytes(n, s)]
    for i in range(n):
        parts.append(np.ascontiguousarray(ds.images[i, 0], dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(ds.labels[i], dtype=np.uint8).tobytes())
    return b"".join(parts)


def decode_dataset(blob: bytes) -> Dataset:
    if not blob.startswith(MAGIC):
        raise BadMagicError("dataset file does not start with STSGDATA1 magic")
    end = blob.find(b"\n", len(MAGIC))
    if end < 0:
        raise TruncatedDataError("dataset header line is incomplete")
    try:
        fields = dict(item.split("=") for item in blob[len(MAGIC):end].decode("ascii").split())
        n, s, classes = int(fields["count"]), int(fields["size"]), int(fields["classes"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise DatasetFormatError(f"malformed dataset header: {exc}") from None
    if classes != NUM_CLASSES:
        raise DatasetFormatError(f"dataset declares {classes} classes, expected {NUM_CLASSES}")
    pos = end + 1
    need = pos + n * (s * s * 5)
    if len(blob) < need:
        raise TruncatedDataError(f"dataset truncated: {len(blob)} bytes, header implies {need}")
    if len(blob) > need:
        raise DatasetFormatError(f"dataset has {len(blob) - need} trailing bytes")
    images = np.empty((n, 1, s, s), dtype=np.float32)
    labels = np.empty((n, s, s), dtype=np.uint8)
    for i in range(n):
        images[i, 0] = np.frombuffer(blob, dtype="<f4", count=s * s, offset=pos).reshape(s, s)
        pos += 4 * s * s
        labels[i] = np.frombuffer(blob, dtype=np.uint8, count=s * s, offset=pos).reshape(s, s)
        pos += s * s
    if labels.size and labels.max() >= NUM_CLASSES:
        raise LabelValueError(f"label value {int(labels.max())} >= {NUM_CLASSES}")
    blobs = np.array([int((lab == FLUID).any()) for lab in labels], dtype=np.int64)
    return Dataset(images, labels, blobs)


def save_dataset(path, ds: Dataset) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_dataset(ds))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return decode_dataset(fh.read())


# -- PGM / PPM --------------------------------------------------------------------------

PALETTE = np.array([
    (0, 0, 0), (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
], dtype=np.uint8)


class ImageFormatError(ValueError):
    pass


def write_pgm(path, array, maxval=255) -> None:
    array = np.asarray(array)
    h, w = array.shape
    dtype = ">u2" if maxval > 255 else np.uint8
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def write_ppm(path, rgb) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def _read_netpbm(path, magic):
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: incomplete header")
        tokens.append(blob[start:pos])
    if tokens[0] != magic:
        raise ImageFormatError(f"{path}: expected {magic.decode()} image, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    return blob[pos + 1:], w, h, maxval


def read_pgm(path):
    """Return (uint array (H, W), maxval) from a binary P5 file."""
    payload, w, h, maxval = _read_netpbm(path, b"P5")
    dtype = ">u2" if maxval > 255 else np.uint8
    count = w * h
    if len(payload) < count * np.dtype(dtype).itemsize:
        raise ImageFormatError(f"{path}: pixel data truncated")
    return np.frombuffer(payload, dtype=dtype, count=count).reshape(h, w).astype(np.int64), maxval


def read_ppm(path):
    payload, w, h, _ = _read_netpbm(path, b"P6")
    return np.frombuffer(payload, dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def image_to_pgm_values(image) -> np.ndarray:
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def pgm_to_image(values, maxval) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) / maxval).astype(np.float32)


def overlay(image, labels, alpha=0.45) -> np.ndarray:
    """Grayscale image blended with the class palette (background left untouched)."""
    gray = np.repeat((np.clip(image, 0, 1) * 255.0)[..., None], 3, axis=-1)
    colors = PALETTE[labels].astype(np.float64)
    mix = np.where((labels > 0)[..., None], (1 - alpha) * gray + alpha * colors, gray)
    return np.round(mix).astype(np.uint8)


def export_pgm(directory, ds: Dataset, count=None) -> list:
    """Write the first ``count`` images as PGM for visual inspection."""
    from pathlib import Path

    out = []
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(min(count or len(ds), len(ds))):
        path = directory / f"sample_{i:04d}.pgm"
        write_pgm(path, image_to_pgm_values(ds.images[i, 0]))
        out.append(path)
    return out
