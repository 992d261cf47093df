"""Figures written alongside the CSV/text reports.

Everything renders off-screen (Agg) straight to files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data.records import CLASS_TITLES  # noqa: E402

DPI = 120

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_roc_curves(report, path: str | Path, title: str = "ROC per class") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 4.5))
        for j, curve in sorted(report.curves.items()):
            name = CLASS_TITLES[j] if len(report.class_names) == len(CLASS_TITLES) else report.class_names[j]
            ax.plot(curve.fpr, curve.tpr, lw=1.2, label=f"{name} (AUC {report.auc[j]:.3f})")
        ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_training_curves(histories: dict[str, Sequence], path: str | Path) -> Path:
    """Train loss and validation AUC per epoch, one line per named run."""
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_auc) = plt.subplots(1, 2, figsize=(8, 3.2))
        for name, hist in histories.items():
            epochs = [h.epoch for h in hist]
            ax_loss.plot(epochs, [h.train_loss for h in hist], label=name)
            ax_auc.plot(epochs, [h.val_auc for h in hist], label=name)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("BCE loss (train)")
        ax_loss.set_yscale("log")
        ax_auc.set_xlabel("epoch")
        ax_auc.set_ylabel("macro AUC (val)")
        ax_auc.set_ylim(0, 1.02)
        ax_loss.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_heatmap_panel(images_hwc: Sequence[np.ndarray], rows: Sequence[Sequence], path: str | Path,
                       column_titles: Sequence[str] = ("image", "backbone", "refined")) -> Path:
    """One row per image: the image followed by its heatmaps as overlays."""
    n = len(images_hwc)
    cols = 1 + max(len(r) for r in rows)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(n, cols, figsize=(2.2 * cols, 2.2 * n), squeeze=False)
        for i, (img, maps) in enumerate(zip(images_hwc, rows)):
            axes[i, 0].imshow(np.clip(img, 0, 1))
            for j, hm in enumerate(maps, 1):
                axes[i, j].imshow(np.clip(img, 0, 1), extent=(0, hm.grid.shape[1], hm.grid.shape[0], 0))
                axes[i, j].imshow(hm.grid, cmap="jet", alpha=0.45, vmin=0, vmax=1)
            for ax in axes[i]:
                ax.set_xticks([])
                ax.set_yticks([])
        for j, t in enumerate(column_titles[:cols]):
            axes[0, j].set_title(t)
        fig.tight_layout()
        return _save(fig, path)
