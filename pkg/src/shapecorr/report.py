"""Figure rendering for CLI reports: written next to the CSV they illustrate."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

LOSS_KEYS = ("total", "orth", "consist", "desc", "lap", "bij")


def save_history_figure(history, path):
    """Loss terms over iterations (log scale) with the alpha curriculum overlaid."""
    iters = np.array([rec["iteration"] for rec in history])
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for key in LOSS_KEYS:
        vals = np.array([rec[key] for rec in history])
        if key != "total" and not vals.any():
            continue
        ax.plot(iters, np.maximum(vals, 1e-300), label=key, linewidth=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    ax2 = ax.twinx()
    ax2.plot(iters, [rec["alpha"] for rec in history],
             color="gray", linestyle=":", linewidth=1.0)
    ax2.set_ylabel("alpha", color="gray")
    fig.tight_layout()
    fig.savefig(str(path), dpi=130)
    plt.close(fig)


def save_cycle_figure(spectral_vals, functional_vals, spatial_vals, path):
    """Sorted per-triplet residual curves for the three cycle metrics."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    for label, vals in (
        ("spectral ||C_cycle - I||^2 / k", spectral_vals),
        ("functional ||C_cycle A - A|| / ||A||", functional_vals),
        ("spatial vertex deviation", spatial_vals),
    ):
        if vals is None:
            continue
        v = np.sort(np.asarray(vals, dtype=np.float64))
        ax.plot(np.linspace(0, 1, len(v)), np.maximum(v, 1e-300), label=label,
                linewidth=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("triplet quantile")
    ax.set_ylabel("residual")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(str(path), dpi=130)
    plt.close(fig)


def save_accuracy_figure(errors, path, thresholds=None):
    """Correspondence accuracy curve: fraction of vertices within a geodesic radius."""
    errors = np.asarray(errors, dtype=np.float64)
    if thresholds is None:
        hi = max(float(errors.max()), 1e-6)
        thresholds = np.linspace(0.0, 1.1 * hi, 200)
    fracs = (errors[None, :] <= thresholds[:, None]).mean(axis=1)
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.plot(thresholds, fracs, linewidth=1.4)
    ax.set_xlabel("geodesic error threshold")
    ax.set_ylabel("fraction of vertices")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(str(path), dpi=130)
    plt.close(fig)
