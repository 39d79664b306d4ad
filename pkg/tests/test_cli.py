from pathlib import Path

import pytest

from specaudit.cli import SEED_ENV, main, parse_config_file, resolve, UsageError
from specaudit.data import read_annotations, read_spectrogram

TINY_TRAIN = ["--epochs", "1", "--batch-size", "4", "--channels", "2,2,2", "--attn-dim", "4", "--no-figures"]


def snapshot(directory: Path) -> dict:
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out", str(out), "--normal", "10", "--anomalous", "2", "--seed", "7", "-q"]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "ae.spck"
    assert main(["train", "--data", str(corpus), "--out", str(out), "--seed", "1", "-q"] + TINY_TRAIN) == 0
    return out


# ---------------------------------------------------------------- synth


def test_synth_writes_corpus_and_annotations(corpus):
    spgs = sorted(corpus.glob("*.spg"))
    assert len(spgs) == 12
    assert read_spectrogram(spgs[0]).shape == (80, 401)
    anns = read_annotations(corpus / "annotations.csv")
    assert sorted(anns) == ["s7_a000", "s7_a001"]
    assert (corpus / "summary.csv").read_text().splitlines()[-1] == "total,12"
    assert "seed = 7" in (corpus / "config.txt").read_text()


def twice(tmp_path, monkeypatch, args):
    """Run the same command line in two fresh working directories; the echoed config includes paths."""
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        monkeypatch.chdir(tmp_path / name)
        assert main(args) == 0
    return snapshot(tmp_path / "a"), snapshot(tmp_path / "b")


def test_synth_is_byte_reproducible(tmp_path, monkeypatch):
    a, b = twice(tmp_path, monkeypatch,
                 ["synth", "--normal", "10", "--anomalous", "2", "--seed", "3", "--out", "out", "-q"])
    assert len(a) == 15 and a == b


def test_synth_minimum_normal_clips(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--normal", "5"]) != 0
    assert "minimum 10 normal clips" in capsys.readouterr().err


def test_seed_falls_back_to_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "3")
    assert main(["synth", "--out", str(tmp_path / "env"), "--normal", "10", "--anomalous", "0", "-q"]) == 0
    monkeypatch.delenv(SEED_ENV)
    assert main(["synth", "--out", str(tmp_path / "flag"), "--normal", "10", "--anomalous", "0",
                 "--seed", "3", "-q"]) == 0
    a, b = snapshot(tmp_path / "env"), snapshot(tmp_path / "flag")
    assert {k: v for k, v in a.items() if k.endswith(".spg")} == {k: v for k, v in b.items() if k.endswith(".spg")}


# ---------------------------------------------------------------- config resolution


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("[synth]\nnormal = 12\nanomalous = 4  # inline comment\nseed = 5\n")
    cfg = resolve("synth", {"config": str(cfg_file), "out": "x", "anomalous": 2, "normal": None, "seed": None})
    assert cfg["normal"] == 12        # file beats default
    assert cfg["anomalous"] == 2      # flag beats file
    assert cfg["seed"] == 5


def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("normal = 12\nlearning_rate = 3\n")
    with pytest.raises(UsageError, match="unknown key"):
        parse_config_file(cfg_file, {"normal"})
    assert main(["synth", "--out", str(tmp_path / "o"), "--config", str(cfg_file)]) == 2
    assert "bad.cfg:2" in capsys.readouterr().err


def test_missing_required_flag(capsys):
    assert main(["train", "--mode", "ae"]) == 2
    assert "--data" in capsys.readouterr().err


# ---------------------------------------------------------------- train


def test_train_outputs(checkpoint):
    assert checkpoint.exists()
    assert checkpoint.with_suffix(".train.csv").read_text().startswith("epoch,lr,train_loss,val_loss")
    assert "mode = ae" in checkpoint.with_suffix(".config.txt").read_text()


def test_train_is_byte_reproducible(corpus, tmp_path, monkeypatch):
    a, b = twice(tmp_path, monkeypatch, ["train", "--data", str(corpus), "--out", "m.spck",
                                         "--mode", "mae", "--seed", "2", "-q"] + TINY_TRAIN[:-1])
    assert "m.train.png" in a and a == b


def test_train_rejects_bad_mask_ratio(corpus, tmp_path, capsys):
    assert main(["train", "--data", str(corpus), "--out", str(tmp_path / "m.spck"),
                 "--mode", "mae", "--mask-ratio", "1.5"]) == 2
    assert "mask_ratio" in capsys.readouterr().err


def test_train_accepts_patch_16(corpus, tmp_path):
    assert main(["train", "--data", str(corpus), "--out", str(tmp_path / "m.spck"), "--mode", "mae",
                 "--patch", "16", "-q"] + TINY_TRAIN) == 0


# ---------------------------------------------------------------- explain


def test_explain_writes_three_artifacts(checkpoint, corpus, tmp_path):
    out = tmp_path / "e"
    assert main(["explain", "--ckpt", str(checkpoint), "--clip", str(corpus / "s7_a000.spg"),
                 "--out", str(out), "-q"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert "s7_a000.error_map.map.spg" in names
    assert "s7_a000.error_map.map.pgm" in names
    assert "s7_a000.error_map.mask.pgm" in names
    assert "s7_a000.error_map.signal.csv" in names
    assert "percentile = 98.0" in (out / "config.txt").read_text()
    pgm = (out / "s7_a000.error_map.map.pgm").read_bytes()
    assert pgm.startswith(b"P5\n401 80\n255\n") and len(pgm) == len(b"P5\n401 80\n255\n") + 80 * 401


def test_explain_smoothgrad_is_reproducible(checkpoint, corpus, tmp_path, monkeypatch):
    a, b = twice(tmp_path, monkeypatch, ["explain", "--ckpt", str(checkpoint), "--clip", str(corpus / "s7_a001.spg"),
                                         "--method", "smoothgrad", "--samples", "2", "--seed", "4", "--out", "e", "-q"])
    assert "e/s7_a001.smoothgrad.map.pgm" in a and a == b


def test_explain_unknown_method(checkpoint, corpus, tmp_path, capsys):
    assert main(["explain", "--ckpt", str(checkpoint), "--clip", str(corpus / "s7_a000.spg"),
                 "--out", str(tmp_path), "--method", "lime"]) == 2
    assert "unknown method" in capsys.readouterr().err


def test_explain_corrupt_checkpoint(corpus, tmp_path, capsys):
    bad = tmp_path / "bad.spck"
    bad.write_bytes(b"SPCK\x01")
    assert main(["explain", "--ckpt", str(bad), "--clip", str(corpus / "s7_a000.spg"),
                 "--out", str(tmp_path / "o")]) == 1
    assert "offset" in capsys.readouterr().err


# ---------------------------------------------------------------- evaluate


def test_evaluate_sweep(checkpoint, corpus, tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["evaluate", "--ckpt", f"small={checkpoint}", "--data", str(corpus), "--out", str(out),
                 "--sweep", "--methods", "error_map,saliency", "-q", "--no-figures"]) == 0
    assert "AUC" in capsys.readouterr().out
    lines = [l for l in (out / "eval.csv").read_text().splitlines() if not l.startswith("#")]
    assert lines[0] == "model,method,percentile,clip_id,tp,fp,fn,fscore,ff_frame,ff_segment"
    aggregate = [l for l in lines if ",ALL," in l]
    assert len(aggregate) == 2 * 10
    assert {l.split(",")[2] for l in aggregate} == {str(p) for p in range(90, 100)}
    assert (out / "auc.csv").read_text().splitlines()[1].startswith("small,10,2,")


def test_evaluate_reports_missing_annotations(checkpoint, corpus, tmp_path, capsys):
    ann = tmp_path / "partial.csv"
    ann.write_text("clip_id,start_sec,end_sec,label\n" + "\n".join(
        l for l in (corpus / "annotations.csv").read_text().splitlines()[1:] if l.startswith("s7_a000")) + "\n")
    out = tmp_path / "ev"
    code = main(["evaluate", "--ckpt", str(checkpoint), "--data", str(corpus), "--annotations", str(ann),
                 "--out", str(out), "-q", "--no-figures"])
    assert code == 1
    assert "s7_a001" in capsys.readouterr().err
    assert "s7_a001" in (out / "diagnostics.txt").read_text()
    rows = (out / "eval.csv").read_text()
    assert "s7_a000" in rows and ",s7_a001," not in rows


# ---------------------------------------------------------------- ingest


def test_ingest_wav_gives_80_by_401(tmp_path):
    import numpy as np
    from specaudit.data import AudioClip, write_wav

    t = np.arange(10 * 20_000) / 20_000
    write_wav(tmp_path / "tone.wav", AudioClip(0.3 * np.sin(2 * np.pi * 500 * t), 20_000))
    assert main(["ingest", str(tmp_path / "tone.wav"), "--out", str(tmp_path / "spg"), "-q"]) == 0
    spec = read_spectrogram(tmp_path / "spg" / "tone.spg")
    assert spec.shape == (80, 401)
    assert spec.metadata["source_id"] == "tone" and spec.metadata["mel_scale"] == "htk"


def test_ingest_needs_inputs(tmp_path):
    assert main(["ingest", "--out", str(tmp_path)]) == 2
