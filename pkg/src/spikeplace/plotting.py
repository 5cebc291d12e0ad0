"""Static report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_training_log(rows: Sequence[Mapping], path) -> Path:
    ep = [r["epoch"] for r in rows if r["epoch"] > 0]
    loss = [r["loss"] for r in rows if r["epoch"] > 0]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ep, loss, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("NT-Xent loss", color="tab:blue")
    val = [(r["epoch"], r["val_recall1"]) for r in rows if not np.isnan(r["val_recall1"])]
    if val:
        ax2 = ax.twinx()
        ax2.plot(*zip(*val), color="tab:orange")
        ax2.set_ylabel("validation Recall@1", color="tab:orange")
        ax2.set_ylim(0, 1)
    return _save(fig, path)


def plot_recall(curves: Mapping[str, Sequence[tuple[int, float]]], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, curve in curves.items():
        n, r = zip(*curve)
        ax.plot(n, r, marker="o", label=label)
    ax.set_xlabel("N")
    ax.set_ylabel("Recall@N")
    ax.set_ylim(0, 1.02)
    ax.legend()
    return _save(fig, path)


def plot_pr(curves: Mapping[str, object], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, pr in curves.items():
        ax.plot(pr.recall, pr.precision, label=label)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.legend()
    return _save(fig, path)


def plot_ablation(labels: Sequence[str], recall1: Sequence[float], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(labels)), recall1, color="tab:green")
    ax.set_xticks(range(len(labels)), labels)
    ax.set_ylabel("Recall@1")
    ax.set_ylim(0, 1)
    return _save(fig, path)


def plot_energy(report, path) -> Path:
    names = [r.name for r in report.layers]
    mem = np.array([r.e_mem_pJ for r in report.layers]) / 1e6
    ops = np.array([r.e_ops_pJ for r in report.layers]) / 1e6
    addr = np.array([r.e_addr_pJ for r in report.layers]) / 1e6
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(names)), 4))
    ax.bar(x, mem, label="memory")
    ax.bar(x, ops, bottom=mem, label="operations")
    ax.bar(x, addr, bottom=mem + ops, label="addressing")
    ax.set_xticks(x, names, rotation=90, fontsize=7)
    ax.set_ylabel("energy per inference (µJ)")
    ax.legend()
    return _save(fig, path)


def plot_histograms(hists: np.ndarray, titles: Sequence[str], path) -> Path:
    """ON minus OFF counts for a few histograms side by side."""
    k = len(hists)
    fig, axes = plt.subplots(1, k, figsize=(2.2 * k, 2.4), squeeze=False)
    for ax, h, t in zip(axes[0], hists, titles):
        img = h[0].astype(float) - h[1].astype(float)
        lim = max(1.0, np.abs(img).max())
        ax.imshow(img, cmap="coolwarm", vmin=-lim, vmax=lim)
        ax.set_title(t, fontsize=8)
        ax.axis("off")
    return _save(fig, path)
