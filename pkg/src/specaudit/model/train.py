"""AE / MAE training loop: AdamW, cosine warm restarts, early stopping."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..optim import adamw_step, cosine_warm_restarts, init_adamw_state
from ..tensor import Tensor
from .checkpoint import Checkpoint
from .masking import apply_mask, sample_patch_mask
from .network import SkipCAE

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    cycles: int = 5
    patience: int = 30
    val_fraction: float = 0.1
    weight_decay: float = 0.01
    seed: int = 0


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)   # (epoch, lr, train_loss, val_loss)
    stop_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    wall_time: float = 0.0

    @property
    def lr_trace(self) -> list:
        return [row[1] for row in self.epochs]

    @property
    def train_losses(self) -> list:
        return [row[2] for row in self.epochs]

    @property
    def val_losses(self) -> list:
        return [row[3] for row in self.epochs]

    def to_csv(self) -> str:
        # wall time is deliberately left out so the file is reproducible
        lines = ["epoch,lr,train_loss,val_loss"]
        lines += [f"{e},{lr!r},{tl!r},{vl!r}" for e, lr, tl, vl in self.epochs]
        return "\n".join(lines) + "\n"


def split_train_val(n: int, val_fraction: float, rng: np.random.Generator):
    order = rng.permutation(n)
    n_val = int(round(val_fraction * n))
    if val_fraction > 0 and n >= 2:
        n_val = max(1, n_val)
    n_val = min(n_val, n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def batch_loss(model: SkipCAE, x: np.ndarray, training: bool, masks=None) -> Tensor:
    """Reconstruction loss of one batch.

    With ``masks`` the masked cells are zero-filled at the input and the
    squared error is averaged over masked cells only.
    """
    target = Tensor(x)
    if masks is None:
        recon, _ = model.forward(target, training=training)
        return T.mse(recon, target)
    recon, _ = model.forward(Tensor(apply_mask(x, masks)), training=training)
    return T.masked_mse(recon, target, masks)


def _draw_masks(model: SkipCAE, n: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([sample_patch_mask(model.config, rng).expanded for _ in range(n)])[:, None]


def train(model: SkipCAE, corpus, config: TrainConfig = TrainConfig(), progress=None):
    """Train ``model`` in place on normal spectrograms.

    Returns ``(TrainReport, Checkpoint)``. On return the model holds the
    best-validation weights, which is also what the checkpoint stores.
    """
    x_all = model.as_batch(corpus) if len(corpus) else None
    if x_all is None or len(x_all) == 0:
        raise ValueError("empty training corpus")
    if config.epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = split_train_val(len(x_all), config.val_fraction, rng)
    x_train, x_val = x_all[train_idx], x_all[val_idx]
    masked = model.config.mode == "mae"
    # fixed validation masks keep validation losses comparable across epochs
    val_masks = _draw_masks(model, len(x_val), rng) if masked and len(x_val) else None

    params = model.parameters()
    names = list(model.params)
    opt = init_adamw_state([p.data for p in params])
    report = TrainReport()
    best = None
    t0 = time.perf_counter()

    for epoch in range(config.epochs):
        lr = cosine_warm_restarts(epoch, config.epochs, config.lr_max, config.lr_min, config.cycles)
        order = rng.permutation(len(x_train))
        total, count = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            xb = x_train[order[s:s + config.batch_size]]
            masks = _draw_masks(model, len(xb), rng) if masked else None
            try:
                loss = batch_loss(model, xb, training=True, masks=masks)
            except FloatingPointError as exc:
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch starting {s}: {exc}") from exc
            grads = T.grad(loss, params)
            adamw_step([p.data for p in params], grads, opt, lr, weight_decay=config.weight_decay)
            total += loss.item() * len(xb)
            count += len(xb)
        train_loss = total / count
        val_loss = evaluate_loss(model, x_val, val_masks) if len(x_val) else train_loss
        if not np.isfinite(val_loss):
            raise RuntimeError(f"non-finite validation loss at epoch {epoch}")
        report.epochs.append((epoch, lr, train_loss, val_loss))
        if val_loss < report.best_val_loss:
            report.best_val_loss, report.best_epoch = val_loss, epoch
            best = (model.state_dict(), copy.deepcopy(opt))
        if progress is not None:
            progress(epoch, lr, train_loss, val_loss)
        log.debug("epoch %d lr=%.3g train=%.6f val=%.6f", epoch, lr, train_loss, val_loss)
        report.stop_epoch = epoch
        if epoch - report.best_epoch >= config.patience:
            log.info("early stop at epoch %d (best %d)", epoch, report.best_epoch)
            break

    report.wall_time = time.perf_counter() - t0
    state, opt_best = best
    model.load_state_dict(state)
    optimizer = {"step": opt_best["step"],
                 "m": dict(zip(names, opt_best["m"])),
                 "v": dict(zip(names, opt_best["v"]))}
    ckpt = Checkpoint(model.config, model.state_dict(), optimizer, report.best_epoch, report.best_val_loss)
    return report, ckpt


def evaluate_loss(model: SkipCAE, x: np.ndarray, masks=None, batch_size: int = 16) -> float:
    total = 0.0
    for s in range(0, len(x), batch_size):
        m = None if masks is None else masks[s:s + batch_size]
        total += batch_loss(model, x[s:s + batch_size], training=False, masks=m).item() * len(x[s:s + batch_size])
    return total / len(x)
