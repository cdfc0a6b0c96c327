"""Figure rendering for the report path: PR curve, P@N bars, training loss.

Rendering always targets files (Agg backend); the delimited outputs stay the
source of truth and these figures are generated alongside them.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_pr_curve(pr, path):
    """PR curve from an (L, 2) array of (recall, precision) points."""
    fig, ax = plt.subplots(figsize=(5, 4))
    if len(pr):
        ax.plot(pr[:, 0], pr[:, 1], lw=1.5)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.02)
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_precision_at(p_at: dict[int, float], path):
    """Precision@N over the requested cutoffs."""
    ns = sorted(p_at)
    vals = [p_at[n] for n in ns]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(ns, vals, marker="o", lw=1.5)
    ax.set_xlabel("N")
    ax.set_ylabel("precision@N")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_loss_curve(iters, losses, path):
    """Training loss trace over iterations."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(iters, losses, lw=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("batch loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
