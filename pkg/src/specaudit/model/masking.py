from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig


@dataclass(frozen=True)
class PatchMask:
    grid: np.ndarray      # (mel_bins / patch_h, frames / patch_w), 1 = masked
    expanded: np.ndarray  # spectrogram-shaped, constant within each patch

    @property
    def ratio(self) -> float:
        return float(self.grid.mean())


def n_masked_patches(config: ModelConfig) -> int:
    total = (config.mel_bins // config.patch_h) * (config.frames // config.patch_w)
    return int(np.floor(config.mask_ratio * total))


def sample_patch_mask(config: ModelConfig, rng: np.random.Generator) -> PatchMask:
    """Mask exactly floor(ratio * patches) patches chosen uniformly without replacement."""
    gh = config.mel_bins // config.patch_h
    gw = config.frames // config.patch_w
    if gh * config.patch_h != config.mel_bins or gw * config.patch_w != config.frames:
        raise ValueError("spectrogram shape must be divisible by the patch size")
    grid = np.zeros(gh * gw)
    grid[rng.choice(gh * gw, size=n_masked_patches(config), replace=False)] = 1.0
    grid = grid.reshape(gh, gw)
    expanded = np.repeat(np.repeat(grid, config.patch_h, axis=0), config.patch_w, axis=1)
    return PatchMask(grid=grid, expanded=expanded)


def apply_mask(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero-fill masked cells."""
    return x * (1.0 - mask)
