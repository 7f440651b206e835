"""Chart rendering for training histories and evaluation comparisons.

All figures go straight to PNG files through the Agg backend, so rendering
works headless and the bytes are reproducible run to run.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .report import INTERVAL_WIDTHS  # noqa: E402

_DPI = 120


def save_loss_curve(history, path):
    """Plot per-epoch training MSE on a log scale."""
    epochs = [e for e, _, _ in history.epochs]
    losses = [m for _, m, _ in history.epochs]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.semilogy(epochs, losses, color="tab:blue", linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training MSE")
    ax.set_title(f"training loss (seed {history.seed})")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_error_chart(results, path):
    """Grouped bars of MAE and RMSE per source."""
    sources = [r["source"] for r in results]
    maes = [r["mae"] for r in results]
    rmses = [r["rmse"] for r in results]
    positions = range(len(sources))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.38
    ax.bar([p - width / 2 for p in positions], maes, width,
           label="MAE", color="tab:blue")
    ax.bar([p + width / 2 for p in positions], rmses, width,
           label="RMSE", color="tab:orange")
    ax.set_xticks(list(positions))
    ax.set_xticklabels(sources, rotation=30, ha="right")
    ax.set_ylabel("home runs")
    ax.set_title("prediction error by source")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_interval_chart(results, path):
    """Accuracy against interval half-width, one line per source."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for r in results:
        accs = [r["interval_accuracy"][str(k)] for k in INTERVAL_WIDTHS]
        ax.plot(INTERVAL_WIDTHS, accs, marker="o", label=r["source"])
    ax.set_xticks(list(INTERVAL_WIDTHS))
    ax.set_xlabel("interval half-width k")
    ax.set_ylabel("accuracy (percent)")
    ax.set_ylim(0, 105)
    ax.set_title("accuracy within +/-k home runs")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
