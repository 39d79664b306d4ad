from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

MODES = ("ae", "mae")
NORMS = ("batch", "none")


@dataclass
class ModelConfig:
    """Geometry and hyperparameters of the skip-connected autoencoder.

    ``frames`` defaults to 401 for the plain autoencoder and 400 for the
    masked one, whose time axis must divide evenly into patches.
    """

    mel_bins: int = 80
    frames: Optional[int] = None
    channels: tuple = (16, 32, 64)
    attn_dim: int = 32
    mode: str = "ae"
    patch_h: int = 4
    patch_w: int = 4
    mask_ratio: float = 0.30
    norm: str = "batch"
    seed: int = 0

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.frames is None:
            self.frames = 400 if self.mode == "mae" else 401
        self.channels = tuple(int(c) for c in self.channels)
        if not self.channels or min(self.channels) < 1:
            raise ValueError("channels must be a non-empty list of positive ints")
        if self.mel_bins < 1 or self.frames < 1 or self.attn_dim < 1:
            raise ValueError("mel_bins, frames and attn_dim must be positive")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.patch_h < 1 or self.patch_w < 1:
            raise ValueError("patch sizes must be positive")
        if self.mode == "mae":
            if self.mel_bins % self.patch_h:
                raise ValueError(f"mel_bins={self.mel_bins} not divisible by patch_h={self.patch_h}")
            if self.frames % self.patch_w:
                raise ValueError(f"frames={self.frames} not divisible by patch_w={self.patch_w}")

    @property
    def shape(self) -> tuple:
        return (self.mel_bins, self.frames)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "channels":
                value = ",".join(str(c) for c in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines)

    @classmethod
    def from_dict(cls, kv: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(kv) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        parsed = {}
        for key, raw in kv.items():
            raw = str(raw)
            if key == "channels":
                parsed[key] = tuple(int(c) for c in raw.split(",") if c)
            elif key in ("mode", "norm"):
                parsed[key] = raw
            elif key == "mask_ratio":
                parsed[key] = float(raw)
            elif key == "frames":
                parsed[key] = None if raw == "None" else int(raw)
            else:
                parsed[key] = int(raw)
        return cls(**parsed)
