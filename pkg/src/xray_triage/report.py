"""Evaluation report rendering: delimited metric tables plus matplotlib figures.

Everything renders to files (Agg backend); nothing opens a window. The report
directory ends up with metrics.tsv alongside confusion.png, metrics.png, and —
when histories or embeddings are supplied — curves.png and pca.png.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import RunAggregate, PCAResult
from .training import TrainHistory


def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.6f}"


def write_metrics_table(aggregate: RunAggregate, class_names: list[str], path: str | Path) -> Path:
    """One row per class: pooled and across-run sensitivity/specificity, tab-separated."""
    path = Path(path)
    header = [
        "class",
        "pooled_sensitivity",
        "pooled_specificity",
        "sensitivity_mean",
        "sensitivity_std",
        "specificity_mean",
        "specificity_std",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for c, name in enumerate(class_names):
            row = [
                name,
                _fmt(aggregate.pooled[c].sensitivity),
                _fmt(aggregate.pooled[c].specificity),
                _fmt(aggregate.sensitivity_mean[c]),
                _fmt(aggregate.sensitivity_std[c]),
                _fmt(aggregate.specificity_mean[c]),
                _fmt(aggregate.specificity_std[c]),
            ]
            fh.write("\t".join(row) + "\n")
    return path


def save_confusion_figure(cm: np.ndarray, class_names: list[str], path: str | Path) -> Path:
    """Annotated heatmap; rows actual, columns predicted."""
    cm = np.asarray(cm)
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(class_names)), class_names, rotation=30, ha="right")
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("actual")
    threshold = cm.max() / 2 if cm.max() else 0.5
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                    color="white" if cm[i, j] > threshold else "black")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_metric_bars(aggregate: RunAggregate, class_names: list[str], path: str | Path) -> Path:
    """Grouped sensitivity/specificity bars with across-run std error bars."""
    path = Path(path)
    k = len(class_names)
    x = np.arange(k)
    width = 0.38

    def series(means, stds):
        vals = np.array([np.nan if m is None else m for m in means])
        errs = np.array([0.0 if s is None else s for s in stds])
        return vals, errs

    sens, sens_err = series(aggregate.sensitivity_mean, aggregate.sensitivity_std)
    spec, spec_err = series(aggregate.specificity_mean, aggregate.specificity_std)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(x - width / 2, sens, width, yerr=sens_err, capsize=3, label="sensitivity")
    ax.bar(x + width / 2, spec, width, yerr=spec_err, capsize=3, label="specificity")
    ax.set_xticks(x, class_names, rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("rate")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_training_curves(histories: list[TrainHistory], path: str | Path) -> Path:
    """Train/validation loss per epoch; one pair of lines per history."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for run, history in enumerate(histories):
        epochs = [r.epoch for r in history.epochs]
        suffix = f" (run {run})" if len(histories) > 1 else ""
        ax.plot(epochs, [r.train_loss for r in history.epochs], label="train" + suffix)
        ax.plot(epochs, [r.val_loss for r in history.epochs], "--", label="validation" + suffix)
        ax.axvline(history.best_epoch, color="gray", alpha=0.3, linewidth=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if len(histories) <= 3:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_pca_scatter(pca: PCAResult, labels: list[str], path: str | Path) -> Path:
    """First two projected axes, one color per label."""
    path = Path(path)
    proj = pca.projected
    if proj.shape[1] < 2:
        proj = np.column_stack([proj[:, 0], np.zeros(len(proj))])
    fig, ax = plt.subplots(figsize=(5, 4.5))
    for name in sorted(set(labels)):
        mask = np.array([l == name for l in labels])
        ax.scatter(proj[mask, 0], proj[mask, 1], s=14, alpha=0.7, label=name)
    ratios = pca.explained_variance_ratio
    ax.set_xlabel(f"axis 1 ({ratios[0]:.1%} var)" if len(ratios) > 0 else "axis 1")
    ax.set_ylabel(f"axis 2 ({ratios[1]:.1%} var)" if len(ratios) > 1 else "axis 2")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_report(
    aggregate: RunAggregate,
    class_names: list[str],
    out_dir: str | Path,
    histories: list[TrainHistory] | None = None,
    pca: PCAResult | None = None,
    pca_labels: list[str] | None = None,
) -> dict[str, Path]:
    """Write the full report bundle; returns the paths written, keyed by artifact."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {
        "metrics": write_metrics_table(aggregate, class_names, out_dir / "metrics.tsv"),
        "confusion": save_confusion_figure(
            aggregate.total_confusion, class_names, out_dir / "confusion.png"),
        "bars": save_metric_bars(aggregate, class_names, out_dir / "metrics.png"),
    }
    if histories:
        written["curves"] = save_training_curves(histories, out_dir / "curves.png")
    if pca is not None and pca_labels is not None:
        written["pca"] = save_pca_scatter(pca, pca_labels, out_dir / "pca.png")
    return written
