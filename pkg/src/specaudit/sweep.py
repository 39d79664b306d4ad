"""Percentile sweeps of F-score and faithfulness over models, methods and clips."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .attribution import explain
from .evaluation import (
    FScore, collapse, detect_peaks, f1, faithfulness, frame_mask, fscore, segment_mask,
)

log = logging.getLogger(__name__)

PERCENTILES = tuple(range(90, 100))
CSV_COLUMNS = ("model", "method", "percentile", "clip_id", "tp", "fp", "fn", "fscore", "ff_frame", "ff_segment")


@dataclass
class EvalRow:
    model: str
    method: str
    percentile: float
    clip_id: str
    tp: int
    fp: int
    fn: int
    fscore: float
    ff_frame: float
    ff_segment: float

    def csv(self) -> str:
        return (f"{self.model},{self.method},{self.percentile:g},{self.clip_id},{self.tp},{self.fp},{self.fn},"
                f"{self.fscore:.6f},{self.ff_frame:.6f},{self.ff_segment:.6f}")


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)          # per-clip rows
    auc: dict = field(default_factory=dict)           # model -> ROC-AUC
    diagnostics: list = field(default_factory=list)
    metadata: dict = field(default_factory=lambda: {"collapse": "sum over frequency / max",
                                                    "error": "mse", "fscore": "f1 per 1-second bin"})

    def aggregate(self) -> list:
        """One ``clip_id="ALL"`` row per (model, method, percentile).

        TP/FP/FN are summed over clips and F is computed from the sums;
        faithfulness is the mean over clips.
        """
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r.model, r.method, r.percentile), []).append(r)
        out = []
        for (model, method, p), rows in groups.items():
            tp, fp, fn = (sum(getattr(r, k) for r in rows) for k in ("tp", "fp", "fn"))
            out.append(EvalRow(model, method, p, "ALL", tp, fp, fn, f1(tp, fp, fn),
                               float(np.mean([r.ff_frame for r in rows])),
                               float(np.mean([r.ff_segment for r in rows]))))
        return out

    def grid(self, metric: str = "fscore") -> dict:
        return {(r.model, r.method, r.percentile): getattr(r, metric) for r in self.aggregate()}

    def best(self, model: str, metric: str = "fscore") -> tuple:
        """(method, percentile, value) with the highest aggregate ``metric`` for ``model``."""
        cells = [(v, method, p) for (m, method, p), v in self.grid(metric).items() if m == model]
        if not cells:
            raise KeyError(model)
        v, method, p = max(cells, key=lambda c: (c[0], -c[2]))
        return method, p, v

    def to_csv(self) -> str:
        lines = [f"# {k}: {v}" for k, v in self.metadata.items()]
        lines.append(",".join(CSV_COLUMNS))
        lines += [r.csv() for r in self.rows]
        lines += [r.csv() for r in self.aggregate()]
        return "\n".join(lines) + "\n"


def clip_seed(seed: int, clip_id: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(clip_id.encode("utf-8"))) % (2 ** 32)


def evaluate_map(model, x, attribution: np.ndarray, annotation, percentiles=PERCENTILES,
                 recon=None) -> list:
    """(percentile, FScore, ff_frame, ff_segment) for one explained clip."""
    x = model.as_batch(x)[0, 0]
    if recon is None:
        recon = model.reconstruct(x)
    signal = collapse(attribution)
    cache: dict = {}

    def ff(mask):
        # both masks cover whole columns, so the column pattern identifies them
        key = np.packbits(mask.any(axis=0)).tobytes()
        if key not in cache:
            cache[key] = faithfulness(model, x, mask, recon)
        return cache[key]

    out = []
    for p in percentiles:
        peaks = detect_peaks(signal, p)
        fs = fscore(peaks, annotation, n_frames=x.shape[1])
        out.append((p, fs, ff(frame_mask(peaks, x.shape)), ff(segment_mask(peaks, annotation, x.shape))))
    return out


def sweep(models: dict, methods, clips, percentiles=PERCENTILES, seed: int = 0,
          baselines=None, steps: int = 50, n: int = 25, progress=None) -> EvalReport:
    """Full grid of per-clip F-score and faithfulness.

    ``clips`` is an iterable of ``(clip_id, spectrogram, annotation)``.
    Failures on a single clip are recorded in ``report.diagnostics`` and the
    sweep carries on.
    """
    report = EvalReport()
    clips = list(clips)
    for model_name, model in models.items():
        for clip_id, values, annotation in clips:
            try:
                x = model.as_batch(values)[0, 0]
                recon = model.reconstruct(x)
            except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
                report.diagnostics.append(f"{model_name}/{clip_id}: {exc}")
                continue
            for method in methods:
                try:
                    amap = explain(model, x, method, seed=clip_seed(seed, clip_id),
                                   baselines=baselines, steps=steps, n=n)
                    results = evaluate_map(model, x, amap.values, annotation, percentiles, recon)
                except Exception as exc:  # noqa: BLE001
                    report.diagnostics.append(f"{model_name}/{method}/{clip_id}: {exc}")
                    log.warning("sweep failure on %s/%s/%s: %s", model_name, method, clip_id, exc)
                    continue
                for p, fs, ffr, ffs in results:
                    report.rows.append(EvalRow(model_name, method, p, clip_id, fs.tp, fs.fp, fs.fn,
                                               fs.f, ffr, ffs))
                if progress is not None:
                    progress(model_name, method, clip_id)
    return report
