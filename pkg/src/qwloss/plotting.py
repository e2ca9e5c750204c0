"""Figures for run reports: training curves and label-transport histograms.

Everything renders off-screen with the Agg backend and writes straight to
files; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_flow_histogram(hist, path, title=None):
    """Bar plot of a FlowHistogram with its mean marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        edges = np.asarray(hist.edges)
        counts = np.asarray(hist.counts)
        widths = np.diff(edges)
        widths = np.where(widths > 0, widths, 1.0)
        ax.bar(edges[:-1], counts, width=widths, align="edge", color="#4c72b0", edgecolor="white", linewidth=0.4)
        ax.axvline(hist.mean, color="#c44e52", lw=1.0, ls="--", label=f"mean {hist.mean:.2e}")
        ax.set_xlabel("flow value")
        ax.set_ylabel("count")
        ax.set_yscale("log" if counts.max(initial=0) > 50 * max(np.median(counts), 1) else "linear")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_curves(history: dict, path, title=None):
    """Objective, residual and validation score against epoch (whichever are present)."""
    panels = [(k, lbl) for k, lbl in (
        ("objective", "objective"),
        ("residual", "primal residual (max)"),
        ("val_score", "validation score"),
    ) if history.get(k) and any(v is not None for v in history[k])]
    if not panels:
        panels = [("objective", "objective")]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(3.4 * len(panels), 2.8), squeeze=False)
        for ax, (key, label) in zip(axes[0], panels):
            y = np.array([np.nan if v is None else v for v in history.get(key, [])], dtype=float)
            x = np.arange(1, y.size + 1)
            ax.plot(x, y, lw=1.0, color="#4c72b0")
            if key == "residual" and np.nanmin(y, initial=np.inf) > 0:
                ax.set_yscale("log")
            ax.set_xlabel("epoch")
            ax.set_ylabel(label)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_accuracy_bars(labels, means, stds, path, ylabel="test accuracy"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(0.9 * len(labels) + 1.5, 3.0))
        x = np.arange(len(labels))
        ax.bar(x, means, yerr=stds, color="#55a868", capsize=3)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=20, ha="right")
        ax.set_ylabel(ylabel)
        return _save(fig, path)
