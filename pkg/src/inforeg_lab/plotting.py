"""Matplotlib rendering for the tidy plot tables (series, x, y)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LABELS = {
    "traces": ("epoch", "Tr(F)", "Fisher trace per modality"),
    "accuracy": ("epoch", "accuracy", "Test accuracy"),
    "gap": ("epoch", "Tr(F) gap", "Fisher trace gap"),
}


def _figure(width=6.0):
    golden = (np.sqrt(5) - 1.0) / 2.0
    return plt.subplots(figsize=(width, width * golden))


def render_series(rows, path, kind: str, windows=None) -> None:
    """Line plot, one line per series. ``windows`` shades epochs flagged in the prime window."""
    xlabel, ylabel, title = LABELS.get(kind, ("x", "y", kind))
    fig, ax = _figure()
    series = {}
    for r in rows:
        series.setdefault(r["series"], ([], []))
        series[r["series"]][0].append(r["x"])
        series[r["series"]][1].append(r["y"])
    for name, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", markersize=3, label=name)
    for t in windows or ():
        ax.axvspan(t - 0.5, t + 0.5, color="0.9", zorder=0)
    if kind == "gap":
        ax.axhline(0.0, color="0.5", lw=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_heatmap(C: np.ndarray, path, title: str = "Batch-gradient cosine similarity") -> None:
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(C, vmin=-1, vmax=1, cmap="RdBu_r", interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_xlabel("batch")
    ax.set_ylabel("batch")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
