"""Report figures: percentile sweeps, explanation panels, training curves.

All figures are rendered off-screen with Agg and written as PNG without
timestamped metadata, so identical inputs give identical files.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "specaudit",
}


def figsize(scale=1.0, ratio=None):
    """Width/height in inches for a figure ``scale`` times a 6.5 in column."""
    width = 6.5 * scale
    if ratio is None:
        ratio = (np.sqrt(5.0) - 1.0) / 2.0
    return width, width * ratio


def save(fig, path, dpi=120):
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def _shade_annotations(ax, annotation, frame_rate=40, color="tab:blue"):
    if annotation is None:
        return
    for start, end in annotation.intervals:
        ax.axvspan(start * frame_rate, end * frame_rate, color=color, alpha=0.2, lw=0)


def plot_percentile_sweep(report, metric, path, title=None):
    """One line per (model, method) across percentiles; 'x' marks each line's best."""
    grid = report.grid(metric)
    series = {}
    for (model, method, p), v in grid.items():
        series.setdefault((model, method), []).append((p, v))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(1.0))
        for (model, method), pts in sorted(series.items()):
            pts.sort()
            ps, vs = zip(*pts)
            ls = "--" if model.lower().startswith("ae") else "-"
            line, = ax.plot(ps, vs, ls, marker=".", label=f"{model} {method}")
            k = int(np.argmax(vs))
            ax.plot(ps[k], vs[k], "x", color=line.get_color(), markersize=8)
        ax.set_xlabel("percentile threshold")
        ax.set_ylabel({"fscore": "F-score", "ff_frame": "faithfulness (frame)",
                       "ff_segment": "faithfulness (segment)"}.get(metric, metric))
        ax.set_ylim(-0.02, 1.02)
        if title:
            ax.set_title(title)
        ax.legend(ncol=2, frameon=False)
        fig.tight_layout()
        save(fig, path)


def plot_explanation(x, attribution, signal, peaks, percentile, path, annotation=None, title=None):
    """Input, raw map, binarized map and temporal signal with peaks, stacked."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(4, 1, figsize=figsize(1.0, 1.1), sharex=True)
        axes[0].imshow(x, origin="lower", aspect="auto", cmap="magma")
        _shade_annotations(axes[0], annotation, color="white")
        axes[0].set_ylabel("mel bin")
        axes[1].imshow(attribution, origin="lower", aspect="auto", cmap="viridis")
        axes[1].set_ylabel("map")
        binary = attribution >= np.percentile(attribution, percentile)
        axes[2].imshow(binary, origin="lower", aspect="auto", cmap="gray_r", interpolation="nearest")
        axes[2].set_ylabel(f"p{percentile:g}")
        axes[3].plot(np.arange(len(signal)), signal, color="k")
        frames = np.asarray(peaks)
        axes[3].plot(frames, signal[frames] if len(frames) else [], "o", color="tab:red")
        _shade_annotations(axes[3], annotation)
        axes[3].set_ylabel("signal")
        axes[3].set_xlabel("frame")
        axes[3].set_xlim(0, len(signal) - 1)
        if title:
            axes[0].set_title(title)
        fig.tight_layout()
        save(fig, path)


def plot_train_curves(report, path, title=None):
    epochs = [r[0] for r in report.epochs]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.8))
        ax.semilogy(epochs, report.train_losses, label="train")
        ax.semilogy(epochs, report.val_losses, label="validation")
        ax.axvline(report.best_epoch, color="0.6", ls=":", lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax2 = ax.twinx()
        ax2.plot(epochs, report.lr_trace, color="0.7", lw=0.8)
        ax2.set_ylabel("learning rate")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        save(fig, path)
