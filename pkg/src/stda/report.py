"""Figure rendering for the report paths.

Every command that writes a JSON report or diagnostics file also renders a
matplotlib figure next to it (same stem, .png): solve diagnostics become a
loss-trace plot, training reports become loss curves, placement fits a
scatter with the fitted line, and augmentation reports a per-image count
histogram.  All rendering uses the Agg backend; nothing opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "figure_path_for",
    "save_loss_trace",
    "save_training_curves",
    "save_placement_fit",
    "save_count_histogram",
    "save_preview",
]


def figure_path_for(report_path) -> Path:
    return Path(report_path).with_suffix(".png")


def save_loss_trace(diagnostics: dict, path) -> Path:
    """Solve diagnostics: total-loss trace with the running best."""
    trace = np.asarray(diagnostics.get("loss_trace", []), dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if trace.size:
        ax.plot(trace, lw=1.0, label="loss")
        ax.plot(np.minimum.accumulate(trace), lw=1.0, ls="--", label="best so far")
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("total loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(
        f"converged={diagnostics.get('converged')} "
        f"final shape loss={diagnostics.get('final_shape_loss', float('nan')):.4g}"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_training_curves(report: dict, path) -> Path:
    """Training report: weighted total plus unweighted component curves."""
    curves = report.get("curves", {})
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    if curves.get("total"):
        axes[0].plot(curves["total"], lw=0.8)
        axes[0].set_title(
            f"total loss (init {report.get('initial_probe_loss', float('nan')):.3g} "
            f"-> final {report.get('final_probe_loss', float('nan')):.3g})"
        )
        axes[0].set_xlabel("step")
    for name in ("shape", "cycle", "adversarial", "hard_positive"):
        if curves.get(name):
            axes[1].plot(curves[name], lw=0.8, label=name)
    axes[1].legend(fontsize=8)
    axes[1].set_title("components (unweighted)")
    axes[1].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_placement_fit(boxes, model, path) -> Path:
    """Bottom-edge vs height scatter with the fitted line."""
    y = np.array([b.y_bottom for b in boxes])
    h = np.array([b.height for b in boxes])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(y, h, s=6, alpha=0.4, label="boxes")
    if y.size:
        span = np.linspace(y.min(), y.max(), 50)
        ax.plot(span, model.slope * span + model.intercept, "r-",
                label=f"h = {model.slope:.3f} y {model.intercept:+.2f}")
    ax.set_xlabel("box bottom edge (px)")
    ax.set_ylabel("box height (px)")
    ax.legend(fontsize=8)
    ax.set_title(f"aspect ratio {model.aspect_ratio:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_count_histogram(report: dict, path) -> Path:
    """Augmentation report: per-image synthetic-count histogram."""
    hist = report.get("count_histogram", {})
    ks = sorted(int(k) for k in hist)
    vals = [hist[str(k)] for k in ks]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(ks, vals, width=0.8)
    ax.set_xlabel("synthetic instances per image")
    ax.set_ylabel("images")
    ax.set_title(
        f"{report.get('total_synthetic', 0)} synthetic instances over "
        f"{report.get('total_images', 0)} images"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_preview(before: np.ndarray, after: np.ndarray, path) -> Path:
    """Side-by-side before/after panel with a thin divider."""
    h = before.shape[0]
    divider = np.ones((h, 2, 3))
    panel = np.concatenate([before, divider, after], axis=1)
    from .blend import save_image

    save_image(np.clip(panel, 0.0, 1.0), path)
    return Path(path)
