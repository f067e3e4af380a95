"""Binary checkpoint blocks shared by the VAE and the property predictors.

Layout (all little-endian)::

    b"LIMO1"
    int32 n, int32 d, int32 m
    int32 H, H x int32 hidden widths
    int32 kind            (0 = VAE, 1 = predictor on decoder output, 2 = predictor on z)
    int32 len, utf-8 JSON metadata
    int32 block count
    per block: int32 len, utf-8 name, int32 ndim, ndim x int32 dims,
               int32 count, count x float32 (row-major)
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LIMO1"

KIND_VAE = 0
KIND_PREDICTOR_DECODED = 1
KIND_PREDICTOR_LATENT = 2


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    n: int
    d: int
    m: int
    widths: tuple
    kind: int
    meta: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)


def _i32(*values) -> bytes:
    return struct.pack("<" + "i" * len(values), *values)


def dump(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, _i32(ckpt.n, ckpt.d, ckpt.m, len(ckpt.widths), *ckpt.widths), _i32(ckpt.kind)]
    meta = json.dumps(ckpt.meta, sort_keys=True).encode()
    out.append(_i32(len(meta)) + meta)
    out.append(_i32(len(ckpt.blocks)))
    for name in sorted(ckpt.blocks):
        arr = np.ascontiguousarray(ckpt.blocks[name], dtype="<f4")
        raw = name.encode()
        out.append(_i32(len(raw)) + raw)
        out.append(_i32(arr.ndim, *arr.shape))
        out.append(_i32(arr.size) + arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, k):
        if self.pos + k > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos : self.pos + k]
        self.pos += k
        return chunk

    def ints(self, k):
        return struct.unpack("<" + "i" * k, self.take(4 * k))


def load_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a LIMO1 checkpoint")
    n, d, m, h = r.ints(4)
    if min(n, d, m, h) < 0:
        raise CheckpointError("negative dimension in header")
    widths = r.ints(h) if h else ()
    (kind,) = r.ints(1)
    (meta_len,) = r.ints(1)
    meta = json.loads(r.take(meta_len).decode()) if meta_len else {}
    (count,) = r.ints(1)
    blocks = {}
    for _ in range(count):
        (name_len,) = r.ints(1)
        name = r.take(name_len).decode()
        (ndim,) = r.ints(1)
        shape = r.ints(ndim) if ndim else ()
        (size,) = r.ints(1)
        if size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"block {name}: length {size} does not match shape {shape}")
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
        blocks[name] = arr
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last block")
    return Checkpoint(n, d, m, tuple(widths), kind, meta, blocks)


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dump(ckpt))


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_bytes(path.read_bytes())


def assign_state(module, blocks: dict) -> None:
    """Copy blocks into a freshly built module, checking names and shapes."""
    params = dict(module.named_parameters())
    buffers = dict(module.named_buffers())
    expected = set(params) | set(buffers)
    missing = expected - set(blocks)
    extra = set(blocks) - expected
    if missing or extra:
        raise CheckpointError(f"block mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, tensor in params.items():
        if blocks[name].shape != tensor.data.shape:
            raise CheckpointError(f"{name}: shape {blocks[name].shape} != {tensor.data.shape}")
        tensor.data = blocks[name].astype(tensor.data.dtype).copy()
    for name, buf in buffers.items():
        if blocks[name].shape != buf.shape:
            raise CheckpointError(f"{name}: shape {blocks[name].shape} != {buf.shape}")
        buf[...] = blocks[name]


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
