"""AdamW and the cosine-with-warm-restarts learning-rate schedule."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def init_adamw_state(params: Sequence[np.ndarray]) -> dict:
    return {
        "step": 0,
        "m": [np.zeros_like(p) for p in params],
        "v": [np.zeros_like(p) for p in params],
    }


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: dict,
               lr: float, betas=(0.9, 0.999), weight_decay: float = 0.01,
               eps: float = 1e-8) -> None:
    """One in-place AdamW update.

    Weight decay is decoupled: ``p <- p - lr * wd * p`` is applied before the
    bias-corrected adaptive step.
    """
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if weight_decay:
            p -= lr * weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def cycle_bounds(total_epochs: int, cycles: int) -> list:
    """Epoch indices where each restart cycle begins, plus the end."""
    cycles = max(1, min(cycles, total_epochs))
    return [(k * total_epochs) // cycles for k in range(cycles + 1)]


def cosine_warm_restarts(epoch: int, total_epochs: int, lr_max: float = 1e-3,
                         lr_min: float = 1e-5, cycles: int = 5) -> float:
    """Learning rate at ``epoch`` for ``cycles`` equal cosine cycles over the budget.

    Each cycle starts at ``lr_max`` and decays towards ``lr_min``; epochs
    past the budget stay on the last cycle's floor.
    """
    bounds = cycle_bounds(total_epochs, cycles)
    epoch = min(epoch, total_epochs - 1)
    for start, stop in zip(bounds[:-1], bounds[1:]):
        if start <= epoch < stop:
            frac = (epoch - start) / (stop - start)
            return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))
    raise ValueError(f"epoch {epoch} outside schedule of {total_epochs} epochs")
