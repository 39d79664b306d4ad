"""Command line interface: ``specaudit synth|ingest|train|explain|evaluate``.

Every command resolves its settings as flags > ``--config`` file > defaults,
logs the resolved values and writes them next to its outputs.  The global
seed falls back to the ``SPECAUDIT_SEED`` environment variable.  Data goes
to files; diagnostics go to stderr.  Exit codes: 0 success, 1 runtime
failure or recorded per-clip problems, 2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import METHODS, explain
from .data import (
    FormatError, mel_spectrogram, read_annotations, read_spectrogram, read_wav, synth_corpus,
    write_annotations, write_pgm, write_spectrogram,
)
from .data.mel import mel_metadata
from .evaluation import collapse, detect_peaks, roc_auc
from .model import (
    CheckpointError, ModelConfig, SkipCAE, TrainConfig, anomaly_scores, load_checkpoint,
    save_checkpoint, train,
)

log = logging.getLogger("specaudit")

SEED_ENV = "SPECAUDIT_SEED"
MAX_BASELINES = 8


class UsageError(Exception):
    """Bad flags or configuration; exit code 2."""


# ---------------------------------------------------------------- settings

DEFAULTS = {
    "synth": {"out": None, "normal": 100, "anomalous": 30, "machine_seed": 0, "wav": False},
    "ingest": {"inputs": None, "out": None, "label": "normal"},
    "train": {"data": None, "out": None, "mode": "ae", "mask_ratio": 0.30, "patch": 4,
              "epochs": 100, "batch_size": 32, "channels": "16,32,64", "attn_dim": 32, "norm": "batch",
              "patience": 30, "val_fraction": 0.1, "lr_max": 1e-3, "lr_min": 1e-5,
              "weight_decay": 0.01, "figures": True},
    "explain": {"ckpt": None, "clip": None, "out": None, "method": "error_map", "percentile": 98.0,
                "steps": 50, "samples": 25, "baseline_dir": None, "figures": True},
    "evaluate": {"ckpt": None, "data": None, "annotations": None, "out": None, "sweep": False,
                 "methods": "error_map", "percentile": 98.0, "steps": 50, "samples": 25,
                 "baseline_dir": None, "figures": True},
}
LIST_KEYS = {"ingest": ("inputs",), "evaluate": ("ckpt",)}
REQUIRED = {"synth": ("out",), "ingest": ("inputs", "out"), "train": ("data", "out"),
            "explain": ("ckpt", "clip", "out"), "evaluate": ("ckpt", "data", "out")}


def parse_config_file(path, allowed) -> dict:
    """``key = value`` lines; ``#`` comments and ``[section]`` headers are ignored."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in allowed:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value.strip('"').strip("'")
    return out


def _coerce(value, default):
    if not isinstance(value, str) or default is None or isinstance(default, str):
        return value
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {value!r}")
    try:
        return type(default)(value)
    except ValueError as exc:
        raise UsageError(f"expected {type(default).__name__}, got {value!r}") from exc


def resolve(command: str, flags: dict) -> dict:
    """Merge defaults, config file and explicit flags; fill the seed."""
    defaults = DEFAULTS[command]
    allowed = set(defaults) | {"seed"}
    cfg = dict(defaults)
    if flags.get("config"):
        for k, v in parse_config_file(flags["config"], allowed).items():
            cfg[k] = _coerce(v, defaults.get(k, 0))
    for k, v in flags.items():
        if k in allowed and v is not None:
            cfg[k] = v
    if cfg.get("seed") is None:
        env = os.environ.get(SEED_ENV)
        try:
            cfg["seed"] = int(env) if env not in (None, "") else 0
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    cfg["seed"] = int(cfg["seed"])
    for key in LIST_KEYS.get(command, ()):
        if isinstance(cfg.get(key), str):
            cfg[key] = [v.strip() for v in cfg[key].split(",") if v.strip()]
    missing = [k for k in REQUIRED[command] if cfg.get(k) in (None, "", [])]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return cfg


def config_text(command: str, cfg: dict) -> str:
    lines = [f"command = {command}", f"version = {__version__}"]
    for k in sorted(cfg):
        v = cfg[k]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(i) for i in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def record_config(command: str, cfg: dict, path: Path) -> None:
    text = config_text(command, cfg)
    for line in text.splitlines():
        log.info("config: %s", line)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- corpus helpers


def load_corpus(data_dir) -> list:
    """(clip_id, Spectrogram) for every ``*.spg`` under ``data_dir``, sorted by file name."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    clips = []
    for path in sorted(data_dir.glob("*.spg")):
        spec = read_spectrogram(path)
        clips.append((spec.metadata.get("source_id", path.stem), spec))
    if not clips:
        raise FileNotFoundError(f"no .spg files in {data_dir}")
    return clips


def is_normal(spec) -> bool:
    return spec.metadata.get("label", "normal") == "normal"


def load_clip(path):
    """A spectrogram from an SPG1 file or, for ``.wav``, from audio."""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return path.stem, mel_spectrogram(read_wav(path))
    spec = read_spectrogram(path)
    return spec.metadata.get("source_id", path.stem), spec.values


def load_baselines(directory, model) -> np.ndarray:
    normals = [s.values for _, s in load_corpus(directory) if is_normal(s)][:MAX_BASELINES]
    if not normals:
        raise FileNotFoundError(f"no normal clips in {directory} to use as baselines")
    return np.stack([model.as_batch(v)[0, 0] for v in normals])


def restore_model(path) -> SkipCAE:
    model = load_checkpoint(path).build_model()
    for p in model.parameters():
        p.requires_grad = False
    return model


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: dict) -> int:
    out = Path(cfg["out"])
    clips = synth_corpus(cfg["normal"], cfg["anomalous"], seed=cfg["seed"],
                         machine_seed=cfg["machine_seed"], keep_audio=cfg["wav"])
    out.mkdir(parents=True, exist_ok=True)
    record_config("synth", cfg, out / "config.txt")
    for c in clips:
        write_spectrogram(out / f"{c.clip_id}.spg", c.values, c.metadata())
        if cfg["wav"]:
            from .data import AudioClip, write_wav

            write_wav(out / f"{c.clip_id}.wav", AudioClip(c.audio, int(mel_metadata()["sample_rate"])))
    write_annotations(out / "annotations.csv", [c.annotation for c in clips if c.annotation])

    counts = Counter()
    for c in clips:
        for kind in c.label.split("+"):
            counts[kind] += 1
    rows = ["label,clips"] + [f"{k},{counts[k]}" for k in sorted(counts)] + [f"total,{len(clips)}"]
    (out / "summary.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    log.info("wrote %d clips (%d normal, %d anomalous) to %s", len(clips), cfg["normal"], cfg["anomalous"], out)
    for k in sorted(counts):
        log.info("  %-10s %d", k, counts[k])
    return 0


def cmd_ingest(cfg: dict) -> int:
    out = Path(cfg["out"])
    inputs = []
    for item in cfg["inputs"]:
        p = Path(item)
        inputs += sorted(p.glob("*.wav")) if p.is_dir() else [p]
    if not inputs:
        raise FileNotFoundError("no WAV files to ingest")
    out.mkdir(parents=True, exist_ok=True)
    record_config("ingest", cfg, out / "config.txt")
    for path in inputs:
        clip = read_wav(path)
        values = mel_spectrogram(clip)
        meta = {"source_id": path.stem, "label": cfg["label"]}
        meta.update(mel_metadata(sample_rate=clip.sample_rate))
        write_spectrogram(out / f"{path.stem}.spg", values, meta)
        log.info("%s -> %s (%d x %d)", path, out / f"{path.stem}.spg", *values.shape)
    return 0


def _model_config(cfg: dict) -> ModelConfig:
    try:
        channels = tuple(int(c) for c in str(cfg["channels"]).split(","))
    except ValueError as exc:
        raise UsageError(f"channels must be comma separated ints, got {cfg['channels']!r}") from exc
    try:
        return ModelConfig(channels=channels, attn_dim=cfg["attn_dim"], mode=cfg["mode"],
                           patch_h=cfg["patch"], patch_w=cfg["patch"], mask_ratio=cfg["mask_ratio"],
                           norm=cfg["norm"], seed=cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(cfg: dict) -> int:
    mconf = _model_config(cfg)
    clips = load_corpus(cfg["data"])
    normal = [s.values for _, s in clips if is_normal(s)]
    if len(normal) < 2:
        raise ValueError(f"need at least 2 normal clips to train, found {len(normal)}")
    skipped = len(clips) - len(normal)
    if skipped:
        log.warning("ignoring %d non-normal clips; training is unsupervised", skipped)
    model = SkipCAE(mconf)
    x = np.stack([model.as_batch(v)[0, 0] for v in normal])

    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    record_config("train", cfg, out.with_suffix(".config.txt"))
    tconf = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr_max=cfg["lr_max"],
                        lr_min=cfg["lr_min"], patience=cfg["patience"], val_fraction=cfg["val_fraction"],
                        weight_decay=cfg["weight_decay"], seed=cfg["seed"])

    def progress(epoch, lr, train_loss, val_loss):
        log.info("epoch %3d  lr %.2e  train %.5f  val %.5f", epoch, lr, train_loss, val_loss)

    report, ckpt = train(model, x, tconf, progress=progress)
    save_checkpoint(out, ckpt)
    out.with_suffix(".train.csv").write_text(report.to_csv(), encoding="utf-8")
    if cfg["figures"]:
        from .plotting import plot_train_curves

        plot_train_curves(report, out.with_suffix(".train.png"), title=f"{mconf.mode} training")
    log.info("best epoch %d (val %.5f), stopped at %d; checkpoint %s",
             report.best_epoch, report.best_val_loss, report.stop_epoch, out)
    return 0


def cmd_explain(cfg: dict) -> int:
    if cfg["method"] not in METHODS:
        raise UsageError(f"unknown method {cfg['method']!r}; choose from {', '.join(METHODS)}")
    if not 0 <= cfg["percentile"] < 100:
        raise UsageError(f"percentile must lie in [0, 100), got {cfg['percentile']}")
    model = restore_model(cfg["ckpt"])
    clip_id, values = load_clip(cfg["clip"])
    x = model.as_batch(values)[0, 0]
    baselines = None
    if cfg["method"] == "gradshap":
        baselines = load_baselines(cfg["baseline_dir"] or Path(cfg["clip"]).parent, model)

    amap = explain(model, x, cfg["method"], seed=cfg["seed"], baselines=baselines,
                   steps=cfg["steps"], n=cfg["samples"])
    signal = collapse(amap.values)
    peaks = detect_peaks(signal, cfg["percentile"])
    threshold = np.percentile(amap.values, cfg["percentile"])

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    record_config("explain", cfg, out / "config.txt")
    stem = f"{clip_id}.{cfg['method']}"
    meta = {"source_id": clip_id, "method": cfg["method"]}
    meta.update({k: str(v) for k, v in amap.metadata.items()})
    write_spectrogram(out / f"{stem}.map.spg", amap.values, meta)
    write_pgm(out / f"{stem}.map.pgm", amap.values)
    write_pgm(out / f"{stem}.mask.pgm", (amap.values >= threshold).astype(float))
    peak_set = set(peaks.frames.tolist())
    rows = ["frame,signal,peak"] + [f"{t},{v:.8f},{int(t in peak_set)}" for t, v in enumerate(signal)]
    (out / f"{stem}.signal.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    if cfg["figures"]:
        from .plotting import plot_explanation

        plot_explanation(x, amap.values, signal, peaks.frames, cfg["percentile"], out / f"{stem}.png",
                         title=f"{clip_id} {cfg['method']}")
    log.info("%s: %d peaks at p%g -> %s", clip_id, len(peaks.frames), cfg["percentile"], out)
    return 0


def _named_checkpoints(specs) -> dict:
    """``name=path`` or bare paths (named by the stored mode, then the file stem)."""
    models = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            path, name = spec, None
        model = restore_model(path)
        name = name or model.config.mode
        if name in models:
            name = Path(path).stem
        if name in models:
            raise UsageError(f"duplicate model name {name!r}")
        models[name] = model
    return models


def cmd_evaluate(cfg: dict) -> int:
    from .sweep import PERCENTILES, EvalReport, sweep

    methods = [m.strip() for m in str(cfg["methods"]).split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown method(s) {', '.join(unknown)}; choose from {', '.join(METHODS)}")
    percentiles = PERCENTILES if cfg["sweep"] else (cfg["percentile"],)
    models = _named_checkpoints(cfg["ckpt"])
    clips = load_corpus(cfg["data"])
    ann_path = Path(cfg["annotations"]) if cfg["annotations"] else Path(cfg["data"]) / "annotations.csv"
    annotations = read_annotations(ann_path) if ann_path.exists() else {}

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    record_config("evaluate", cfg, out / "config.txt")

    labels = np.array([not is_normal(s) for _, s in clips])
    n_anom, n_norm = int(labels.sum()), int((~labels).sum())
    auc_rows = ["model,n_normal,n_anomalous,auc"]
    report = EvalReport()
    for name, model in models.items():
        scores = anomaly_scores(model, np.stack([model.as_batch(s.values)[0, 0] for _, s in clips]))
        if n_anom and n_norm:
            report.auc[name] = roc_auc(scores, labels)
            auc_rows.append(f"{name},{n_norm},{n_anom},{report.auc[name]:.6f}")
            print(f"{name}: AUC {report.auc[name]:.4f} over {n_norm} normal / {n_anom} anomalous clips")
        else:
            log.warning("%s: AUC needs both normal and anomalous clips (%d / %d)", name, n_norm, n_anom)
    (out / "auc.csv").write_text("\n".join(auc_rows) + "\n", encoding="utf-8")

    missing = [cid for (cid, s), y in zip(clips, labels) if y and cid not in annotations]
    for cid in missing:
        report.diagnostics.append(f"{cid}: anomalous clip without annotations, excluded")
    targets = [(cid, s.values, annotations[cid]) for (cid, s), y in zip(clips, labels)
               if y and cid in annotations]
    if targets:
        baselines = None
        if "gradshap" in methods:
            any_model = next(iter(models.values()))
            baselines = load_baselines(cfg["baseline_dir"] or cfg["data"], any_model)
        res = sweep(models, methods, targets, percentiles, seed=cfg["seed"], baselines=baselines,
                    steps=cfg["steps"], n=cfg["samples"],
                    progress=lambda m, meth, cid: log.debug("explained %s/%s/%s", m, meth, cid))
        report.rows = res.rows
        report.diagnostics += res.diagnostics
    report.metadata["percentiles"] = ",".join(f"{p:g}" for p in percentiles)
    (out / "eval.csv").write_text(report.to_csv(), encoding="utf-8")
    if cfg["figures"] and cfg["sweep"] and report.rows:
        from .plotting import plot_percentile_sweep

        for metric in ("fscore", "ff_frame", "ff_segment"):
            plot_percentile_sweep(report, metric, out / f"{metric}.png")
    for name in models:
        if report.rows:
            method, p, v = report.best(name)
            log.info("%s: best F %.3f (%s at p%g)", name, v, method, p)

    if report.diagnostics:
        (out / "diagnostics.txt").write_text("\n".join(report.diagnostics) + "\n", encoding="utf-8")
        for d in report.diagnostics:
            print(f"warning: {d}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train,
            "explain": cmd_explain, "evaluate": cmd_evaluate}


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specaudit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--seed", type=int, help=f"global seed (default ${SEED_ENV} or 0)")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out")
    p.add_argument("--normal", type=int)
    p.add_argument("--anomalous", type=int)
    p.add_argument("--machine-seed", type=int)
    p.add_argument("--wav", action="store_const", const=True, help="also write the rendered audio")

    p = sub.add_parser("ingest", parents=[common], help="convert WAV files to SPG1 spectrograms")
    p.add_argument("inputs", nargs="*", default=None, help="WAV files or directories")
    p.add_argument("--out")
    p.add_argument("--label")

    p = sub.add_parser("train", parents=[common], help="train an AE or MAE on normal clips")
    p.add_argument("--data")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--mode", choices=("ae", "mae"))
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--patch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--channels", help="comma separated encoder widths")
    p.add_argument("--attn-dim", type=int)
    p.add_argument("--norm", choices=("batch", "none"), help="normalization after each convolution")
    p.add_argument("--patience", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--lr-max", type=float)
    p.add_argument("--lr-min", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--no-figures", dest="figures", action="store_const", const=False)

    p = sub.add_parser("explain", parents=[common], help="attribution map for one clip")
    p.add_argument("--ckpt")
    p.add_argument("--clip", help="SPG1 or WAV file")
    p.add_argument("--out")
    p.add_argument("--method", help=", ".join(METHODS))
    p.add_argument("--percentile", type=float)
    p.add_argument("--steps", type=int, help="integrated gradients steps")
    p.add_argument("--samples", type=int, help="noise samples for smoothgrad / gradshap")
    p.add_argument("--baseline-dir", help="normal clips used as gradshap baselines")
    p.add_argument("--no-figures", dest="figures", action="store_const", const=False)

    p = sub.add_parser("evaluate", parents=[common], help="AUC plus F-score / faithfulness grids")
    p.add_argument("--ckpt", action="append", help="checkpoint, optionally name=path; repeatable")
    p.add_argument("--data")
    p.add_argument("--annotations", help="defaults to DATA/annotations.csv")
    p.add_argument("--out")
    p.add_argument("--sweep", action="store_const", const=True, help="percentiles 90 to 99")
    p.add_argument("--methods", help="comma separated method names")
    p.add_argument("--percentile", type=float, help="single percentile when not sweeping")
    p.add_argument("--steps", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--baseline-dir")
    p.add_argument("--no-figures", dest="figures", action="store_const", const=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "quiet")}
    if flags.get("inputs") == []:
        flags["inputs"] = None
    try:
        cfg = resolve(args.command, flags)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, CheckpointError, FileNotFoundError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
