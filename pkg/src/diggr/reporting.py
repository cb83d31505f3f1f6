"""Figure rendering for CLI reports.

Every report-producing command writes delimited text first; these helpers
render the matching matplotlib figure next to it. All figures go through
the Agg backend so the CLI works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_KWARGS = {"dpi": 150, "bbox_inches": "tight", "metadata": {"Software": None}}


def save_loss_curves(history, path):
    """Loss components over epochs on a log-friendly twin layout."""
    epochs = [row["epoch"] for row in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(epochs, [row["loss_d"] for row in history], label="factor-path")
    ax1.plot(epochs, [row["loss_g"] for row in history], label="graph-path")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("reconstruction loss")
    ax1.legend(frameon=False)
    ax2.plot(epochs, [row["loss_z"] for row in history], color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("factor-model loss")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_correlation_heatmap(corr, path, title=None):
    corr = np.asarray(corr)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(corr, cmap="viridis", vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_xlabel("embedding dimension")
    ax.set_ylabel("embedding dimension")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_k_sweep(ks, means, stds, path):
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.errorbar(ks, means, yerr=stds, marker="o", capsize=3)
    ax.set_xlabel("number of factors")
    ax.set_ylabel("accuracy")
    ax.set_xticks(list(ks))
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_run_scores(report, path):
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    runs = np.arange(len(report.per_run))
    ax.bar(runs, report.per_run, color="tab:blue", alpha=0.8)
    ax.axhline(report.mean, color="tab:red", linestyle="--", label=f"mean {report.mean:.4f}")
    ax.set_xlabel("run")
    ax.set_ylabel(report.metric_name)
    ax.set_xticks(runs)
    ax.legend(frameon=False)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_factor_sizes(hard_labels, num_factors, path):
    counts = np.bincount(np.asarray(hard_labels), minlength=num_factors)
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.bar(np.arange(num_factors), counts, color="tab:green", alpha=0.8)
    ax.set_xlabel("factor")
    ax.set_ylabel("nodes")
    ax.set_xticks(np.arange(num_factors))
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_embedding_scatter(matrix, labels, path, title=None):
    """2-D scatter of embeddings via their top two principal components."""
    h = np.asarray(matrix, dtype=np.float64)
    centered = h - h.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    coords = centered @ vt[:2].T
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    for value in np.unique(labels):
        pts = coords[labels == value]
        ax.scatter(pts[:, 0], pts[:, 1], s=8, alpha=0.7, label=str(value))
    ax.set_xlabel("pc 1")
    ax.set_ylabel("pc 2")
    if title:
        ax.set_title(title)
    if len(np.unique(labels)) <= 10:
        ax.legend(frameon=False, fontsize=7)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
