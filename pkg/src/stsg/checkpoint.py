"""Binary checkpoint format.

Layout: magic ``b"STSG1\\n"``, then for each parameter in name order:
u32 name length, name bytes (UTF-8), u32 rank, rank x u32 extents,
float64 payload; all little-endian.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"STSG1\n"


class CheckpointError(ValueError):
    pass


class BadCheckpointMagic(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class CheckpointMismatch(CheckpointError):
    """Checkpoint parameters do not match the model (names or shapes)."""


def encode(params: dict) -> bytes:
    out = [MAGIC]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def decode(blob: bytes) -> dict:
    if not blob.startswith(MAGIC):
        raise BadCheckpointMagic("bad checkpoint magic")
    pos = len(MAGIC)
    params = {}

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedCheckpoint(f"checkpoint truncated at byte {pos}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    last = None
    while pos < len(blob):
        (length,) = struct.unpack("<I", take(4))
        name = take(length).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        if last is not None and name <= last:
            raise CheckpointError(f"parameter {name!r} out of name order")
        last = name
        params[name] = data.astype(np.float64)
    return params


def save_checkpoint(path, model) -> None:
    with open(path, "wb") as fh:
        fh.write(encode({name: p.data for name, p in model.named_parameters()}))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        return decode(fh.read())


def check_compatible(model, params: dict) -> None:
    own = dict(model.named_parameters())
    for name, p in own.items():
        if name not in params:
            raise CheckpointMismatch(f"parameter {name} missing from checkpoint")
        if params[name].shape != p.shape:
            raise CheckpointMismatch(f"parameter {name} has shape {params[name].shape} in checkpoint, "
                                     f"model expects {p.shape}")
    extra = sorted(set(params) - set(own))
    if extra:
        raise CheckpointMismatch(f"parameter {extra[0]} in checkpoint is not part of the model")


def apply_checkpoint(model, params: dict) -> None:
    """Validate names/shapes, then copy values into the model."""
    check_compatible(model, params)
    for name, p in model.named_parameters():
        p.data = params[name].astype(p.dtype)
        p.grad = None
