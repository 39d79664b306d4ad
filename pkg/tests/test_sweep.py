import numpy as np
import pytest

from specaudit.data.io import AnnotationSet
from specaudit.evaluation import f1
from specaudit.sweep import CSV_COLUMNS, PERCENTILES, EvalReport, EvalRow, clip_seed, sweep


class BumpModel:
    """Reconstructs perfectly except for a dip in the given columns; fails on ``bad`` clips."""

    def __init__(self, cols, bad=()):
        self.cols, self.bad = list(cols), set(bad)

    def as_batch(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape == (1, 1):
            raise ValueError("clip too small")
        return x[None, None] if x.ndim == 2 else x

    def reconstruct(self, x):
        out = np.array(x, dtype=float)
        out[..., self.cols] *= 0.5
        return out


def row(clip, p, tp, fp, fn, ff=0.5, model="m", method="error_map"):
    return EvalRow(model, method, p, clip, tp, fp, fn, f1(tp, fp, fn), ff, ff / 2)


def test_aggregate_is_micro_over_clips():
    rep = EvalReport(rows=[row("a", 98, 1, 0, 1, ff=0.2), row("b", 98, 2, 3, 0, ff=0.4)])
    (agg,) = rep.aggregate()
    assert (agg.clip_id, agg.tp, agg.fp, agg.fn) == ("ALL", 3, 3, 1)
    assert agg.fscore == pytest.approx(6 / 10)
    assert agg.ff_frame == pytest.approx(0.3)


def test_aggregate_is_order_independent():
    rows = [row(c, p, i % 3, i % 2, 1) for i, (c, p) in enumerate((c, p) for c in "abc" for p in (90, 95))]
    a = EvalReport(rows=rows).to_csv().splitlines()[-2:]
    b = EvalReport(rows=rows[::-1]).aggregate()
    assert sorted(a) == sorted(r.csv() for r in b)


def test_best_prefers_lower_percentile_on_ties():
    rep = EvalReport(rows=[row("a", 95, 1, 0, 0), row("a", 97, 1, 0, 0), row("a", 99, 0, 0, 1)])
    assert rep.best("m") == ("error_map", 95, 1.0)
    with pytest.raises(KeyError):
        rep.best("other")


def test_csv_layout():
    rep = EvalReport(rows=[row("a", 90, 1, 1, 0)])
    lines = rep.to_csv().splitlines()
    header = [l for l in lines if not l.startswith("#")][0]
    assert header == ",".join(CSV_COLUMNS)
    assert any(l.startswith("# collapse") for l in lines)
    assert lines[-1].startswith("m,error_map,90,ALL,1,1,0,")


def test_clip_seed_is_stable():
    assert clip_seed(0, "clip") == clip_seed(0, "clip")
    assert clip_seed(0, "clip") != clip_seed(1, "clip")
    assert clip_seed(0, "a") != clip_seed(0, "b")


def test_sweep_grid_shape_and_values():
    x = np.ones((4, 120))
    ann = AnnotationSet("c", [(1.0, 2.0)])
    rep = sweep({"m": BumpModel([50])}, ["error_map"], [("c", x, ann)])
    assert len(rep.rows) == len(PERCENTILES)
    for r in rep.rows:
        assert (r.tp, r.fp, r.fn) == (1, 0, 0)
        # replacing column 50 with 0.5 and reconstructing again halves it once more
        assert r.ff_frame == pytest.approx(0.75)
        assert r.ff_segment == pytest.approx(0.75)
    assert not rep.diagnostics


def test_sweep_records_failures_and_continues():
    ann = AnnotationSet("c", [(0.0, 1.0)])
    clips = [("bad", np.ones((1, 1)), ann), ("good", np.ones((4, 80)), ann)]
    rep = sweep({"m": BumpModel([10])}, ["error_map", "nonsense"], clips, percentiles=(98,))
    assert [r.clip_id for r in rep.rows] == ["good"]
    assert any(d.startswith("m/bad") for d in rep.diagnostics)
    assert any("nonsense" in d for d in rep.diagnostics)
