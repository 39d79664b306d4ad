import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specaudit.data.io import AnnotationSet
from specaudit.evaluation import (
    FScore, PeakSet, collapse, detect_peaks, f1, faithfulness, faithfulness_frame,
    faithfulness_segment, frame_mask, fscore, replace_with_reconstruction, roc_auc, segment_mask,
)

# ---------------------------------------------------------------- brute-force oracles


def oracle_percentile(values, p):
    s = sorted(values)
    pos = p / 100 * (len(s) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def oracle_peaks(signal, p, window=5):
    thr = oracle_percentile(list(signal), p)
    out = []
    n = len(signal)
    for t in range(n):
        v = signal[t]
        if v < thr:
            continue
        ok, lower_seen = True, False
        for u in range(max(0, t - window), min(n, t + window + 1)):
            if u < t and signal[u] >= v:
                ok = False
            if u > t and signal[u] > v:
                ok = False
            if signal[u] < v:
                lower_seen = True
        if ok and lower_seen:
            out.append(t)
    return out


def oracle_fscore(peaks, intervals, n_frames, fps=40):
    n_bins = -(-n_frames // fps)
    tp = fp = fn = 0
    for b in range(n_bins):
        annotated = any(s < b + 1 and e > b for s, e in intervals)
        has_peak = any(b * fps <= t < (b + 1) * fps for t in peaks)
        if annotated and has_peak:
            tp += 1
        elif annotated:
            fn += 1
        elif has_peak:
            fp += 1
    return tp, fp, fn


def oracle_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def random_case(rng, n_frames=401):
    kind = rng.integers(3)
    if kind == 0:
        signal = rng.random(n_frames)
    elif kind == 1:  # quantized: plenty of ties and plateaus
        signal = rng.integers(0, 6, n_frames) / 5.0
    else:
        signal = np.convolve(rng.random(n_frames), np.ones(7) / 7, mode="same")
    intervals, t = [], 0
    while t < n_frames / 40 - 1:
        start = t + int(rng.integers(0, 4))
        dur = int(rng.integers(1, 3))
        if start + dur > n_frames / 40:
            break
        intervals.append((float(start), float(start + dur)))
        t = start + dur
    return signal, intervals


# ---------------------------------------------------------------- collapse


def test_collapse_constant_map():
    np.testing.assert_array_equal(collapse(np.full((4, 6), 0.3)), np.ones(6))


def test_collapse_single_cell():
    m = np.zeros((5, 8))
    m[2, 3] = 0.7
    expected = np.zeros(8)
    expected[3] = 1.0
    np.testing.assert_array_equal(collapse(m), expected)


def test_collapse_zero_map():
    np.testing.assert_array_equal(collapse(np.zeros((3, 4))), np.zeros(4))


def test_collapse_matches_column_loop():
    rng = np.random.default_rng(0)
    m = rng.random((10, 30))
    sums = [sum(m[i, j] for i in range(10)) for j in range(30)]
    top = max(sums)
    np.testing.assert_allclose(collapse(m), [s / top for s in sums], rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_collapse_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    m = rng.random((6, 20))
    perm = rng.permutation(20)
    np.testing.assert_array_equal(collapse(m[:, perm]), collapse(m)[perm])


# ---------------------------------------------------------------- peaks


def test_constant_signal_has_no_peaks():
    assert len(detect_peaks(np.full(100, 0.5), 98)) == 0


@pytest.mark.parametrize("p", [50, 90, 98, 99.9])
def test_single_spike(p):
    s = np.zeros(401)
    s[100] = 1.0
    assert detect_peaks(s, p).frames.tolist() == [100]


def test_plateau_resolves_leftmost():
    s = np.zeros(30)
    s[10:13] = 1.0
    assert detect_peaks(s, 50).frames.tolist() == [10]


def test_peaks_need_window_maximum():
    s = np.zeros(40)
    s[10], s[13], s[30] = 1.0, 0.8, 0.9
    assert detect_peaks(s, 50).frames.tolist() == [10, 30]


def test_percentile_out_of_range():
    with pytest.raises(ValueError):
        detect_peaks(np.ones(5), 100)


def test_peaks_match_bruteforce_oracle_p98():
    rng = np.random.default_rng(1)
    s = rng.random(401)
    assert detect_peaks(s, 98).frames.tolist() == oracle_peaks(s, 98)


# ---------------------------------------------------------------- F-score


def ann(*intervals):
    return AnnotationSet("c", [tuple(map(float, iv)) for iv in intervals])


def test_one_peak_in_annotated_second():
    assert fscore([45], ann((1, 2)), clip_seconds=10) == FScore(1, 0, 0)
    assert fscore([45], ann((1, 2)), clip_seconds=10).f == 1.0


def test_no_peaks():
    fs = fscore([], ann((3, 4)), clip_seconds=10)
    assert (fs.tp, fs.fp, fs.fn, fs.f) == (0, 0, 1, 0.0)


def test_fp_counts_seconds_not_peaks():
    fs = fscore([0, 10, 20, 45], ann((1, 2)), n_frames=400)
    assert fs == FScore(1, 1, 0)
    assert fs.f == pytest.approx(2 / 3)


def test_partial_last_second_is_a_bin():
    fs = fscore([400], ann((0, 1)), n_frames=401)
    assert fs == FScore(0, 1, 1)


def test_empty_everything_scores_zero():
    assert f1(0, 0, 0) == 0.0
    assert fscore([], None, n_frames=400).f == 0.0


def test_peaks_outside_clip():
    with pytest.raises(ValueError):
        fscore([500], ann((0, 1)), n_frames=400)


def test_fscore_and_peaks_match_bruteforce_1000_cases():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        signal, intervals = random_case(rng)
        p = float(rng.uniform(80, 99.5))
        peaks = detect_peaks(signal, p)
        expected = oracle_peaks(signal, p)
        assert peaks.frames.tolist() == expected
        fs = fscore(peaks, AnnotationSet("c", intervals), n_frames=len(signal))
        assert (fs.tp, fs.fp, fs.fn) == oracle_fscore(expected, intervals, len(signal))


# ---------------------------------------------------------------- faithfulness


class ScaledModel:
    """Reconstruction = factor * x for cells in ``noisy_cols``, exact elsewhere."""

    def __init__(self, noisy_cols, factor=0.5):
        self.noisy_cols, self.factor = noisy_cols, factor
        self.calls = 0

    def as_batch(self, x):
        x = np.asarray(x, dtype=float)
        return x[None, None] if x.ndim == 2 else x

    def reconstruct(self, x):
        self.calls += 1
        out = np.array(x, dtype=float)
        out[..., self.noisy_cols] *= self.factor
        return out


def test_empty_mask_gives_zero():
    model = ScaledModel([3])
    x = np.ones((4, 8))
    assert faithfulness(model, x, np.zeros((4, 8), bool)) == 0.0
    assert faithfulness_frame(model, x, PeakSet(np.array([], int), 98)) == 0.0


def test_replacing_the_faulty_columns_removes_the_error():
    # X2 keeps the reconstruction in col 3; re-reconstructing 0.5*x halves again,
    # so the error ratio is 0.25
    model = ScaledModel([3])
    x = np.ones((4, 8))
    ff = faithfulness_frame(model, x, PeakSet(np.array([3]), 98))
    assert ff == pytest.approx(0.75)


def test_zero_second_error_gives_one():
    model = ScaledModel([3], factor=0.0)
    x = np.ones((4, 8))
    assert faithfulness_frame(model, x, PeakSet(np.array([3]), 98)) == 1.0


def test_ratio_above_one_clamps_to_zero():
    class Worse(ScaledModel):
        def reconstruct(self, x):
            self.calls += 1
            out = np.array(x, dtype=float)
            out[..., 3] = 0.5 if self.calls == 1 else x[..., 3] + 0.5 * np.sqrt(1.5)
            return out

    x = np.ones((4, 8))
    assert faithfulness_frame(Worse([3]), x, PeakSet(np.array([3]), 98)) == 0.0


def test_exact_model_scores_zero():
    model = ScaledModel([], factor=1.0)
    assert faithfulness_frame(model, np.ones((2, 6)), PeakSet(np.array([1]), 98)) == 0.0


def test_segment_mask_requires_peak_and_annotation():
    shape = (2, 400)
    peaks = PeakSet(np.array([50, 130, 300]), 98)
    mask = segment_mask(peaks, ann((1, 2), (5, 6)), shape)
    cols = np.flatnonzero(mask.any(axis=0))
    assert cols.tolist() == list(range(40, 80))


def test_segment_outside_annotations_is_zero():
    model = ScaledModel([5])
    x = np.ones((2, 400))
    assert faithfulness_segment(model, x, PeakSet(np.array([5]), 98), ann((5, 6))) == 0.0


def test_segment_full_cover_equals_frame_all():
    model = ScaledModel(list(range(0, 400, 7)))
    rng = np.random.default_rng(3)
    x = rng.random((3, 400))
    all_frames = PeakSet(np.arange(400), 98)
    seg = faithfulness_segment(model, x, PeakSet(np.arange(0, 400, 40), 98), ann((0, 10)))
    assert seg == faithfulness_frame(model, x, all_frames)


def test_replacement_leaves_unmasked_cells_untouched():
    rng = np.random.default_rng(4)
    x, r = rng.random((5, 50)), rng.random((5, 50))
    mask = frame_mask(PeakSet(np.array([3, 17]), 98), x.shape)
    x2 = replace_with_reconstruction(x, r, mask)
    assert np.array_equal(x2[~mask], x[~mask])
    assert np.array_equal(x2[mask], r[mask])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_faithfulness_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    model = ScaledModel(list(rng.choice(40, size=5, replace=False)), factor=float(rng.uniform(0, 2)))
    x = rng.random((3, 40))
    frames = np.sort(rng.choice(40, size=int(rng.integers(0, 6)), replace=False))
    ff = faithfulness_frame(model, x, PeakSet(frames, 98))
    assert 0.0 <= ff <= 1.0


# ---------------------------------------------------------------- ROC-AUC


def test_auc_perfect():
    assert roc_auc([0.1, 0.2, 0.9, 0.95], [0, 0, 1, 1]) == 1.0


def test_auc_all_ties():
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auc_pairs_form():
    assert roc_auc([(0.1, False), (0.9, True)]) == 1.0


def test_auc_single_class():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_twelve_random_scores():
    rng = np.random.default_rng(5)
    s = rng.random(12)
    y = np.array([1, 0] * 6)
    assert roc_auc(s, y) == oracle_auc(s, y)


def test_auc_equals_pair_count_exactly_up_to_200():
    rng = np.random.default_rng(6)
    for n in list(range(2, 40)) + [60, 100, 150, 200]:
        s = np.round(rng.random(n), int(rng.integers(1, 4)))  # rounding creates ties
        y = rng.random(n) < 0.4
        y[0], y[1] = True, False
        assert roc_auc(s, y) == oracle_auc(s, y)
