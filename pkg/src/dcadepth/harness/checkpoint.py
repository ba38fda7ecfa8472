"""Versioned binary snapshots of model tensors, optimizer state and epoch.

Layout (all integers little-endian)::

    b"DCAC" | u32 version
    u32 count, then per tensor: u32 name_len | name (UTF-8) | u32 rank | u32 dims[rank] | f32 payload
    optimizer: u32 step | f64 lr, beta1, beta2, eps, weight_decay | moment tensor table (m/<name>, v/<name>)
    u32 epoch
    u32 config_len | model config as key = value text
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import parse_kv
from ..model import DepthModel, ModelConfig, build_model
from .optim import OptimizerState

MAGIC = b"DCAC"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    def __init__(self, name: str, message: str):
        super().__init__(f"{name}: {message}")
        self.name = name


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model: DepthModel
    optimizer: OptimizerState
    epoch: int


def _pack_table(items: list[tuple[str, np.ndarray]]) -> bytes:
    out = [struct.pack("<I", len(items))]
    for name, arr in items:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def encode_checkpoint(model: DepthModel, optimizer: OptimizerState | None = None, epoch: int = 0) -> bytes:
    optimizer = optimizer or OptimizerState()
    tensors = [(name, t.data) for name, t in model.named_tensors()]
    moments = []
    for name in model.named_parameters():
        if name in optimizer.m:
            moments.append(("m/" + name, optimizer.m[name]))
            moments.append(("v/" + name, optimizer.v[name]))
    config = model.config.to_kv().encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        _pack_table(tensors),
        struct.pack("<I5d", optimizer.step, optimizer.lr, optimizer.beta1, optimizer.beta2,
                    optimizer.eps, optimizer.weight_decay),
        _pack_table(moments),
        struct.pack("<I", epoch),
        struct.pack("<I", len(config)) + config,
    ]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def table(self) -> list[tuple[str, np.ndarray]]:
        (count,) = self.unpack("<I")
        items = []
        for _ in range(count):
            (nlen,) = self.unpack("<I")
            name = self.take(nlen).decode("utf-8")
            (rank,) = self.unpack("<I")
            dims = self.unpack(f"<{rank}I")
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(self.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
            items.append((name, arr))
        return items


def decode_checkpoint(buf: bytes, config: ModelConfig | None = None) -> Checkpoint:
    """Parse and validate a checkpoint; ``config`` overrides the embedded config echo."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointMagicError("not a DCAC checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    tensors = r.table()
    step, lr, b1, b2, eps, wd = r.unpack("<I5d")
    moments = r.table()
    (epoch,) = r.unpack("<I")
    (clen,) = r.unpack("<I")
    echo = ModelConfig.from_kv(parse_kv(r.take(clen).decode("utf-8")))

    model = build_model(config or echo)
    expected = dict(model.named_tensors())
    seen = set()
    for name, arr in tensors:
        if name not in expected:
            raise CheckpointShapeError(name, "tensor not present in the model config")
        if arr.shape != expected[name].shape:
            raise CheckpointShapeError(name, f"shape {arr.shape} disagrees with config shape {expected[name].shape}")
        expected[name].data = arr.copy()
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise CheckpointShapeError(sorted(missing)[0], "tensor missing from checkpoint")

    opt = OptimizerState(lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd, step=step)
    for name, arr in moments:
        kind, pname = name.split("/", 1)
        if pname not in expected or arr.shape != expected[pname].shape:
            raise CheckpointShapeError(name, "optimizer moment does not match a parameter")
        (opt.m if kind == "m" else opt.v)[pname] = arr.copy()
    return Checkpoint(model, opt, epoch)


def save_checkpoint(path: str | Path, model: DepthModel, optimizer: OptimizerState | None = None, epoch: int = 0) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(model, optimizer, epoch))
    return path


def load_checkpoint(path: str | Path, config: ModelConfig | None = None) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), config)
