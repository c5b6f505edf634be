"""File-output figure rendering for the command-line reports.

Uses the Agg backend unconditionally: these plots are written next to
the delimited artifacts, never shown interactively.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .corpus import TASKS


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def plot_confusion(cm, path):
    """Annotated heatmap of one task's confusion matrix."""
    counts = np.asarray(cm.counts, dtype=np.int64)
    k = len(cm.labels)
    fig, ax = plt.subplots(figsize=(1.0 + 0.7 * k, 0.8 + 0.7 * k))
    shares = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
    im = ax.imshow(shares, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(k), cm.labels)
    ax.set_yticks(range(k), cm.labels)
    ax.set_xlabel("hypothesis")
    ax.set_ylabel("reference")
    ax.set_title(f"{cm.task} (accuracy {cm.accuracy:.3f})")
    for i in range(k):
        for j in range(k):
            color = "white" if shares[i, j] > 0.5 else "black"
            ax.text(j, i, str(counts[i, j]), ha="center", va="center", color=color)
    fig.colorbar(im, ax=ax, fraction=0.046)
    _save(fig, path)


def plot_layer_weights(role: str, weights, path):
    weights = np.asarray(weights, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(1.0 + 0.5 * weights.size, 3.0))
    ax.bar(range(weights.size), weights)
    ax.set_xticks(range(weights.size))
    ax.set_xlabel("layer")
    ax.set_ylabel("weight")
    ax.set_ylim(0.0, max(1.0, float(weights.max()) * 1.1))
    ax.set_title(f"{role} layer weights")
    _save(fig, path)


def plot_loss_curve(rows, path):
    """Total and per-task training losses against the step counter."""
    rows = list(rows)
    if not rows:
        return
    arr = np.asarray(rows, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(arr[:, 0], arr[:, 1], label="total", linewidth=2.0)
    for i, task in enumerate(TASKS):
        ax.plot(arr[:, 0], arr[:, 2 + i], label=task, alpha=0.7)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    _save(fig, path)


def plot_grid_summary(rows, path):
    """Grouped per-task accuracy bars, one group per stream combination."""
    rows = list(rows)
    if not rows:
        return
    names = [f"{r['acoustic']}+{r['linguistic']}" for r in rows]
    x = np.arange(len(rows))
    width = 0.8 / len(TASKS)
    fig, ax = plt.subplots(figsize=(2.0 + 1.6 * len(rows), 4.0))
    for i, task in enumerate(TASKS):
        values = [r[f"{task}_accuracy"] for r in rows]
        ax.bar(x + (i - (len(TASKS) - 1) / 2.0) * width, values, width, label=task)
    ax.set_xticks(x, names, rotation=20, ha="right")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    _save(fig, path)
