"""Post-hoc attribution maps for reconstruction autoencoders.

The explained scalar is always the reconstruction MSE of the (possibly
perturbed) input, ``F(x) = mean((model(x) - x) ** 2)``; gradients flow
through both the model input and the reconstruction target.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

GRAD_BATCH = 8
METHODS = ("error_map", "saliency", "integrated_gradients", "smoothgrad", "gradshap", "gradcam")


@dataclass
class AttributionMap:
    values: np.ndarray
    method: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"attribution map must be 2-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError(f"{self.method}: attribution map must be finite and nonnegative")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def header(self) -> dict:
        return {"method": self.method, **{k: str(v) for k, v in self.metadata.items()}}


@contextmanager
def _frozen(model):
    """Skip parameter gradients while explaining."""
    flags = [p.requires_grad for p in model.parameters()]
    for p in model.parameters():
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(model.parameters(), flags):
            p.requires_grad = f


def _single(model, x) -> np.ndarray:
    xb = model.as_batch(x)
    if len(xb) != 1:
        raise ValueError("attribution methods explain one spectrogram at a time")
    return xb[0, 0]


def reconstruction_error(model, x) -> float:
    """F(x) evaluated without gradients."""
    x = _single(model, x)
    d = model.reconstruct(x) - x
    return float(np.sum(d * d) / d.size)


def input_gradients(model, xs: np.ndarray, batch_size: int = GRAD_BATCH) -> np.ndarray:
    """dF/dx for each spectrogram in ``xs`` (B, H, W), evaluated independently."""
    xs = np.asarray(xs, dtype=np.float64)
    out = np.empty_like(xs)
    with _frozen(model):
        for s in range(0, len(xs), batch_size):
            chunk = xs[s:s + batch_size]
            X = Tensor(chunk[:, None], requires_grad=True)
            recon, _ = model.forward(X, training=False)
            loss = T.mse(recon, X)
            if len(chunk) > 1:
                # sum of per-sample means
                loss = loss * float(len(chunk))
            (g,) = T.grad(loss, [X])
            out[s:s + len(chunk)] = g[:, 0]
    return out


def error_map(model, x) -> AttributionMap:
    x = _single(model, x)
    d = x - model.reconstruct(x)
    return AttributionMap(d * d, "error_map")


def saliency(model, x) -> AttributionMap:
    x = _single(model, x)
    return AttributionMap(np.abs(input_gradients(model, x[None])[0]), "saliency")


def integrated_gradients_signed(model, x, baseline=None, steps: int = 50) -> np.ndarray:
    """(x - b) * mean_k grad F(b + a_k (x - b)) at midpoints a_k = (k + 1/2) / steps."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = _single(model, x)
    b = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if b.shape != x.shape:
        raise ValueError(f"baseline shape {b.shape} does not match input {x.shape}")
    diff = x - b
    alphas = (np.arange(steps) + 0.5) / steps
    total = np.zeros_like(x)
    for s in range(0, steps, GRAD_BATCH):
        a = alphas[s:s + GRAD_BATCH, None, None]
        total += input_gradients(model, b[None] + a * diff[None]).sum(axis=0)
    return diff * (total / steps)


def integrated_gradients(model, x, baseline=None, steps: int = 50) -> AttributionMap:
    signed = integrated_gradients_signed(model, x, baseline, steps)
    return AttributionMap(np.abs(signed), "integrated_gradients",
                          {"steps": steps, "baseline": "zeros" if baseline is None else "custom"})


def smoothgrad(model, x, n: int = 25, sigma: float = 0.1, seed: int = 0) -> AttributionMap:
    """Mean absolute gradient over ``n`` Gaussian-perturbed copies of ``x``.

    ``sigma`` is a fraction of the input's value range.
    """
    if n < 1 or sigma < 0:
        raise ValueError("smoothgrad needs n >= 1 and sigma >= 0")
    x = _single(model, x)
    rng = np.random.default_rng(seed)
    scale = sigma * float(x.max() - x.min())
    total = np.zeros_like(x)
    for s in range(0, n, GRAD_BATCH):
        k = min(GRAD_BATCH, n - s)
        noisy = x[None] + scale * rng.standard_normal((k,) + x.shape)
        total += np.abs(input_gradients(model, noisy)).sum(axis=0)
    return AttributionMap(total / n, "smoothgrad", {"n": n, "sigma": sigma, "seed": seed})


def gradshap_signed(model, x, baselines, n_samples: int = 25, sigma: float = 0.05,
                    seed: int = 0, alphas=None) -> np.ndarray:
    """Expected (x - b) * grad F(b + a (x - b) + noise) over random baselines and a ~ U(0, 1).

    ``alphas`` pins the interpolation points (one per sample) instead of
    drawing them.
    """
    x = _single(model, x)
    baselines = [np.asarray(b, dtype=np.float64) for b in baselines]
    if not baselines:
        raise ValueError("gradshap needs at least one baseline")
    for b in baselines:
        if b.shape != x.shape:
            raise ValueError(f"baseline shape {b.shape} does not match input {x.shape}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(baselines), size=n_samples)
    if alphas is None:
        alphas = rng.uniform(0.0, 1.0, size=n_samples)
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (n_samples,):
        raise ValueError("alphas must hold one value per sample")
    scale = sigma * float(x.max() - x.min())
    total = np.zeros_like(x)
    for s in range(0, n_samples, GRAD_BATCH):
        idx = range(s, min(n_samples, s + GRAD_BATCH))
        bs = np.stack([baselines[picks[i]] for i in idx])
        a = alphas[s:s + len(bs), None, None]
        pts = bs + a * (x[None] - bs)
        if scale > 0:
            pts = pts + scale * rng.standard_normal(pts.shape)
        total += ((x[None] - bs) * input_gradients(model, pts)).sum(axis=0)
    return total / n_samples


def gradshap(model, x, baselines, n_samples: int = 25, sigma: float = 0.05,
             seed: int = 0, alphas=None) -> AttributionMap:
    signed = gradshap_signed(model, x, baselines, n_samples, sigma, seed, alphas)
    return AttributionMap(np.abs(signed), "gradshap",
                          {"n_samples": n_samples, "sigma": sigma, "seed": seed,
                           "n_baselines": len(baselines)})


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation weights with half-pixel aligned centres."""
    src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    w = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - w
    m[np.arange(n_out), hi] += w
    return m


def gradcam_from_activation(act: np.ndarray, act_grad: np.ndarray, out_shape: tuple,
                            crop: tuple | None = None) -> np.ndarray:
    """ReLU(sum_c mean(dF/dA_c) * A_c), bilinearly upsampled and min-max scaled to [0, 1]."""
    weights = act_grad.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, act, axes=1), 0.0)
    up = bilinear_matrix(cam.shape[0], out_shape[0]) @ cam @ bilinear_matrix(cam.shape[1], out_shape[1]).T
    if crop is not None:
        up = up[:crop[0], :crop[1]]
    lo, hi = up.min(), up.max()
    return (up - lo) / (hi - lo) if hi > lo else np.zeros_like(up)


def gradcam(model, x) -> AttributionMap:
    x = _single(model, x)
    with _frozen(model):
        X = Tensor(x[None, None], requires_grad=True)
        recon, acts = model.forward(X, training=False)
        target = acts["enc_last"]
        (g,) = T.grad(T.mse(recon, X), [target])
    values = gradcam_from_activation(target.data[0], g[0], model.padded_shape, crop=x.shape)
    return AttributionMap(values, "gradcam", {"layer": "enc_last"})


def explain(model, x, method: str, *, seed: int = 0, baselines=None, steps: int = 50,
            n: int = 25, sigma: float | None = None) -> AttributionMap:
    """Dispatch by method name with the library defaults."""
    if method == "error_map":
        return error_map(model, x)
    if method == "saliency":
        return saliency(model, x)
    if method == "integrated_gradients":
        return integrated_gradients(model, x, steps=steps)
    if method == "smoothgrad":
        return smoothgrad(model, x, n=n, sigma=0.1 if sigma is None else sigma, seed=seed)
    if method == "gradshap":
        if baselines is None:
            raise ValueError("gradshap needs baselines")
        return gradshap(model, x, baselines, n_samples=n, sigma=0.05 if sigma is None else sigma, seed=seed)
    if method == "gradcam":
        return gradcam(model, x)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
