"""Explanation metrics: temporal collapse, peaks, interval F-score, faithfulness, ROC-AUC."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

from .data.io import FRAMES_PER_SECOND, AnnotationSet

PEAK_WINDOW = 5


@dataclass(frozen=True)
class PeakSet:
    frames: np.ndarray      # strictly increasing frame indices
    percentile: float

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class FScore:
    tp: int
    fp: int
    fn: int

    @property
    def f(self) -> float:
        return f1(self.tp, self.fp, self.fn)

    def __add__(self, other: "FScore") -> "FScore":
        return FScore(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def collapse(attribution: np.ndarray) -> np.ndarray:
    """Sum over frequency, then divide by the maximum (all-zero stays all-zero)."""
    a = np.asarray(attribution, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"attribution map must be 2-D, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("attribution map contains non-finite values")
    signal = a.sum(axis=0)
    peak = signal.max()
    return signal / peak if peak > 0 else np.zeros_like(signal)


def detect_peaks(signal: np.ndarray, percentile: float, window: int = PEAK_WINDOW) -> PeakSet:
    """Frames at or above the signal's own ``percentile`` that are strict local maxima.

    A frame is a local maximum when no frame within ``window`` on its left
    reaches its value, none on its right exceeds it, and the window is not
    flat. Plateaus therefore resolve to their leftmost frame.
    """
    if not 0 < percentile < 100:
        raise ValueError(f"percentile must be in (0, 100), got {percentile}")
    s = np.asarray(signal, dtype=np.float64)
    n = len(s)
    if n == 0:
        return PeakSet(np.zeros(0, dtype=int), percentile)
    threshold = np.percentile(s, percentile)
    padded = np.pad(s, window, constant_values=-np.inf)
    left = sliding_window_view(padded[:-window - 1], window).max(axis=1)
    right = sliding_window_view(padded[window + 1:], window).max(axis=1)
    lo = np.pad(s, window, constant_values=np.inf)
    lowest = sliding_window_view(lo, 2 * window + 1).min(axis=1)
    is_peak = (s >= threshold) & (left < s) & (right <= s) & (lowest < s)
    return PeakSet(np.flatnonzero(is_peak), percentile)


def n_seconds(n_frames: int, frame_rate: int = FRAMES_PER_SECOND) -> int:
    # a trailing partial second counts as a whole bin
    return math.ceil(n_frames / frame_rate)


def annotated_seconds(annotation: AnnotationSet | None, n_bins: int) -> np.ndarray:
    """Boolean per 1-second bin: does any annotated interval overlap it?"""
    mask = np.zeros(n_bins, dtype=bool)
    if annotation is None:
        return mask
    for start, end in annotation.intervals:
        for b in range(n_bins):
            if start < b + 1 and end > b:
                mask[b] = True
    return mask


def fscore(peaks, annotation: AnnotationSet | None, clip_seconds: float | None = None,
           n_frames: int | None = None, frame_rate: int = FRAMES_PER_SECOND) -> FScore:
    """Per-second TP/FP/FN of detected peaks against annotated intervals.

    TP: annotated seconds holding at least one peak. FN: annotated seconds
    without any. FP: unannotated seconds holding at least one peak.
    """
    frames = np.asarray(peaks.frames if isinstance(peaks, PeakSet) else peaks, dtype=int)
    if n_frames is None:
        if clip_seconds is None:
            raise ValueError("give clip_seconds or n_frames")
        n_frames = int(round(clip_seconds * frame_rate))
    bins = n_seconds(n_frames, frame_rate)
    if len(frames) and (frames.min() < 0 or frames.max() >= bins * frame_rate):
        raise ValueError("peak frames fall outside the clip")
    hit = np.zeros(bins, dtype=bool)
    hit[frames // frame_rate] = True
    ann = annotated_seconds(annotation, bins)
    return FScore(int(np.sum(hit & ann)), int(np.sum(hit & ~ann)), int(np.sum(~hit & ann)))


# ---------------------------------------------------------------- faithfulness


def frame_mask(peaks, shape: tuple) -> np.ndarray:
    """Replacement mask covering the full column of every peak frame."""
    frames = np.asarray(peaks.frames if isinstance(peaks, PeakSet) else peaks, dtype=int)
    mask = np.zeros(shape, dtype=bool)
    mask[:, frames] = True
    return mask


def segment_mask(peaks, annotation: AnnotationSet | None, shape: tuple,
                 frame_rate: int = FRAMES_PER_SECOND) -> np.ndarray:
    """Replacement mask over every second that holds a peak and overlaps an annotation."""
    frames = np.asarray(peaks.frames if isinstance(peaks, PeakSet) else peaks, dtype=int)
    n_frames = shape[1]
    bins = n_seconds(n_frames, frame_rate)
    hit = np.zeros(bins, dtype=bool)
    hit[frames // frame_rate] = True
    keep = hit & annotated_seconds(annotation, bins)
    mask = np.zeros(shape, dtype=bool)
    for b in np.flatnonzero(keep):
        mask[:, b * frame_rate:(b + 1) * frame_rate] = True
    return mask


def replace_with_reconstruction(x: np.ndarray, recon: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """M * recon + (1 - M) * x; unmasked cells are copied bit-for-bit."""
    return np.where(mask, recon, x)


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(np.sum(d * d) / d.size)


def faithfulness(model, x: np.ndarray, mask: np.ndarray, recon: np.ndarray | None = None) -> float:
    """max(1 - Error(X2_hat, X2) / Error(X1_hat, X1), 0) with MSE as the error.

    Returns 0 for an empty mask or an input the model reconstructs exactly.
    """
    x = model.as_batch(x)[0, 0]
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError(f"mask shape {mask.shape} does not match input {x.shape}")
    if not mask.any():
        return 0.0
    if recon is None:
        recon = model.reconstruct(x)
    err1 = _mse(recon, x)
    if err1 == 0.0:
        return 0.0
    x2 = replace_with_reconstruction(x, recon, mask)
    err2 = _mse(model.reconstruct(x2), x2)
    return max(1.0 - err2 / err1, 0.0)


def faithfulness_frame(model, x, peaks, recon=None) -> float:
    x = model.as_batch(x)[0, 0]
    return faithfulness(model, x, frame_mask(peaks, x.shape), recon)


def faithfulness_segment(model, x, peaks, annotation, recon=None) -> float:
    x = model.as_batch(x)[0, 0]
    return faithfulness(model, x, segment_mask(peaks, annotation, x.shape), recon)


# ---------------------------------------------------------------- detection


def roc_auc(scores, labels=None) -> float:
    """Mann-Whitney ROC-AUC; ties between classes count one half.

    Accepts parallel ``scores``/``labels`` sequences or a single sequence of
    ``(score, label)`` pairs. Labels are truthy for anomalous.
    """
    if labels is None:
        pairs = list(scores)
        scores = [p[0] for p in pairs]
        labels = [p[1] for p in pairs]
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both normal and anomalous samples")
    ranks = rankdata(s)  # average ranks for ties
    u = float(ranks[y].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)
