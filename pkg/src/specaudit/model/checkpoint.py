"""SPCK checkpoint files.

Layout (little-endian)::

    b"SPCK" | u16 version | u32 n | n bytes UTF-8 key=value text
    u32 tensor count | per tensor: u16 name length, name, u8 ndim, u32 dims, f64 values

The text block holds the model config plus ``ckpt.*`` bookkeeping keys.
Optimizer moments are stored as tensors named ``opt.m.<param>``/``opt.v.<param>``.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ModelConfig
from .network import SkipCAE

MAGIC = b"SPCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    state: "OrderedDict[str, np.ndarray]"
    optimizer: Optional[dict] = None  # {"step": int, "m": {name: arr}, "v": {name: arr}}
    epoch: int = 0
    best_val_loss: float = float("inf")

    @classmethod
    def from_model(cls, model: SkipCAE, optimizer=None, epoch=0, best_val_loss=float("inf")):
        return cls(model.config, model.state_dict(), optimizer, epoch, best_val_loss)

    def build_model(self) -> SkipCAE:
        model = SkipCAE(self.config)
        model.load_state_dict(self.state)
        return model


def _text_block(ckpt: Checkpoint) -> str:
    lines = [ckpt.config.to_text(), f"ckpt.epoch={ckpt.epoch}",
             f"ckpt.best_val_loss={float(ckpt.best_val_loss)!r}"]
    if ckpt.optimizer is not None:
        lines.append(f"ckpt.adam_step={ckpt.optimizer['step']}")
    return "\n".join(lines) + "\n"


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    tensors = list(ckpt.state.items())
    if ckpt.optimizer is not None:
        tensors += [(f"opt.m.{k}", v) for k, v in ckpt.optimizer["m"].items()]
        tensors += [(f"opt.v.{k}", v) for k, v in ckpt.optimizer["v"].items()]
    text = _text_block(ckpt).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(text)), text, struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                f"only {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic at offset 0: not an SPCK checkpoint")
    version, n_text = r.unpack("<HI", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    text = r.take(n_text, "config text").decode("utf-8")
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise CheckpointError(f"config line {lineno} is not key=value: {line!r}")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    meta = {k[5:]: kv.pop(k) for k in list(kv) if k.startswith("ckpt.")}
    config = ModelConfig.from_dict(kv)

    (count,) = r.unpack("<I", "tensor count")
    state, m, v = OrderedDict(), OrderedDict(), OrderedDict()
    for _ in range(count):
        (n_name,) = r.unpack("<H", "tensor name length")
        name = r.take(n_name, "tensor name").decode("utf-8")
        (ndim,) = r.unpack("<B", f"ndim of {name}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}")
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(8 * n, f"values of {name}"), dtype="<f8").astype(np.float64).reshape(shape)
        if name.startswith("opt.m."):
            m[name[6:]] = arr
        elif name.startswith("opt.v."):
            v[name[6:]] = arr
        else:
            state[name] = arr
    if r.pos != len(buf):
        raise CheckpointError(f"trailing bytes after offset {r.pos}")
    optimizer = None
    if "adam_step" in meta:
        optimizer = {"step": int(meta["adam_step"]), "m": m, "v": v}
    return Checkpoint(config=config, state=state, optimizer=optimizer,
                      epoch=int(meta.get("epoch", 0)),
                      best_val_loss=float(meta.get("best_val_loss", "inf")))


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())
