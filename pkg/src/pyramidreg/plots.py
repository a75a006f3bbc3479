"""Figure rendering for the report path (headless, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_cost_trace(traces, path):
    """Optimization cost per iteration, one colored segment per level.

    The y axis is logarithmic; level boundaries are marked so the
    characteristic drop at each hand-off is visible.
    """
    fig, ax = plt.subplots(figsize=(8, 4.5))
    offset = 0
    cmap = plt.get_cmap("viridis")
    n = max(len(traces), 1)
    floor = 1e-300
    for i, trace in enumerate(traces):
        hist = np.maximum(np.asarray(trace.cost_history, dtype=np.float64), floor)
        xs = np.arange(offset, offset + len(hist))
        ax.plot(xs, hist, color=cmap(i / max(n - 1, 1)), lw=1.2,
                label=f"level {trace.level}")
        offset += len(hist)
        if i < len(traces) - 1:
            ax.axvline(offset - 0.5, color="0.85", lw=0.8, zorder=0)
    ax.set_yscale("log")
    ax.set_xlabel("iteration (cumulative over levels)")
    ax.set_ylabel("data cost")
    ax.set_title("Per-level optimization trace")
    if traces:
        ax.legend(fontsize=8, ncol=3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_level_summary(traces, path):
    """Iterations per level (bars) with mean blend weight overlaid."""
    levels = [t.level for t in traces]
    iters = [t.iterations for t in traces]
    alphas = [t.mean_alpha for t in traces]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(levels, iters, color="#4878cf", width=0.7)
    ax.set_xlabel("pyramid level")
    ax.set_ylabel("iterations", color="#4878cf")
    ax.set_xticks(levels)
    twin = ax.twinx()
    twin.plot(levels, alphas, "o-", color="#d65f5f", ms=4, lw=1.2)
    twin.set_ylabel("mean alpha", color="#d65f5f")
    twin.set_ylim(0.0, 1.0)
    ax.set_title("Level summary")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_error_histogram(pred, gt, path, bins: int = 50):
    """Histogram of per-point endpoint error magnitudes."""
    err = np.linalg.norm(np.asarray(pred) - np.asarray(gt), axis=1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(err, bins=bins, color="#6acc65", edgecolor="white", lw=0.3)
    ax.axvline(float(err.mean()), color="#d65f5f", lw=1.2,
               label=f"mean = {err.mean():.4g}")
    ax.set_xlabel("endpoint error")
    ax.set_ylabel("points")
    ax.set_title("Flow error distribution")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
