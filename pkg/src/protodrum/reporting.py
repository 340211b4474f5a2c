"""Figures and delimited exports for training and evaluation runs.

Every report path writes machine-readable output (JSON/CSV) next to a PNG
rendering of the same numbers. Matplotlib runs on the Agg backend; nothing
here opens a window.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import POLYPHONY_BUCKETS, EvalReport
from .episodes import EvalPoint


def save_training_curves(log: list[EvalPoint], path: str | Path) -> Path:
    """Train/validation loss and validation accuracy over episodes."""
    path = Path(path)
    episodes = [p.episode for p in log]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(episodes, [p.train_loss for p in log], label="train loss", marker="o", ms=3)
    ax1.plot(episodes, [p.val_loss for p in log], label="val loss", marker="s", ms=3)
    ax1.set_ylabel("episode loss")
    ax1.legend()
    ax1.grid(alpha=0.3)
    ax2.plot(episodes, [p.val_acc for p in log], color="tab:green", marker="o", ms=3)
    ax2.set_ylabel("val query accuracy")
    ax2.set_xlabel("episode")
    ax2.set_ylim(0, 1.02)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_per_class_csv(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "f_measure"])
        for label, f in report.per_class.items():
            writer.writerow([label, f"{f:.4f}"])
    return path


def save_per_class_figure(report: EvalReport, path: str | Path) -> Path:
    """Horizontal F-measure bars per sound class."""
    path = Path(path)
    labels = list(report.per_class)
    values = [report.per_class[k] for k in labels]
    fig, ax = plt.subplots(figsize=(7, 0.35 * max(len(labels), 4) + 1.2))
    y = np.arange(len(labels))
    ax.barh(y, values, color="tab:blue")
    ax.set_yticks(y, labels)
    ax.invert_yaxis()
    ax.set_xlim(0, 1.0)
    ax.set_xlabel("F-measure")
    mode = "include" if report.include_support else "exclude"
    ax.set_title(f"per-class F ({mode} support), micro={report.micro:.3f}")
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_polyphony_csv(table: dict[str, dict[str, float | None]], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["support_polyphony"] + [f"query_{q}" for q in POLYPHONY_BUCKETS])
        for s in POLYPHONY_BUCKETS:
            row = [s]
            for q in POLYPHONY_BUCKETS:
                value = table.get(s, {}).get(q)
                row.append("" if value is None else f"{value:.4f}")
            writer.writerow(row)
    return path


def save_polyphony_figure(table: dict[str, dict[str, float | None]], path: str | Path) -> Path:
    """Heatmap of F over support x query polyphony buckets."""
    path = Path(path)
    grid = np.full((3, 3), np.nan)
    for i, s in enumerate(POLYPHONY_BUCKETS):
        for j, q in enumerate(POLYPHONY_BUCKETS):
            value = table.get(s, {}).get(q)
            if value is not None:
                grid[i, j] = value
    fig, ax = plt.subplots(figsize=(4.6, 4))
    im = ax.imshow(grid, vmin=0, vmax=1, cmap="viridis")
    ax.set_xticks(range(3), [f"query {q}" for q in POLYPHONY_BUCKETS])
    ax.set_yticks(range(3), [f"support {s}" for s in POLYPHONY_BUCKETS])
    for i in range(3):
        for j in range(3):
            if np.isnan(grid[i, j]):
                text = "n/a"
            else:
                text = f"{grid[i, j]:.2f}"
            ax.text(j, i, text, ha="center", va="center",
                    color="white" if (np.isnan(grid[i, j]) or grid[i, j] < 0.6) else "black")
    fig.colorbar(im, ax=ax, label="F-measure")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_probability_figure(
    curve: np.ndarray,
    onsets: list[float],
    positive_times: list[float],
    path: str | Path,
    hop_seconds: float = 0.010,
    title: str = "",
) -> Path:
    """One transcription pass: probability curve, picked onsets, support marks."""
    path = Path(path)
    t = np.arange(curve.size) * hop_seconds
    fig, ax = plt.subplots(figsize=(9, 3))
    ax.plot(t, curve, lw=0.8, color="tab:blue")
    for x in onsets:
        ax.axvline(x, color="tab:red", lw=0.8, alpha=0.8)
    for x in positive_times:
        ax.axvline(x, color="tab:green", lw=1.2, ls="--", alpha=0.9)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("p(target)")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
