"""Evaluation: confusion matrices, one-vs-rest metrics, run aggregation,
penultimate-feature embeddings, and a PCA projection for inspection tools.

Conventions: confusion matrix rows are actual classes, columns are predicted.
Sensitivity and specificity are computed one-vs-rest per class; a 0/0 ratio is
reported as ``None`` rather than silently coerced to 0 or 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import ModelGraph


# --- confusion matrix and per-class metrics ----------------------------------

def confusion_matrix(predicted, actual, num_classes: int) -> np.ndarray:
    """[num_classes, num_classes] counts; entry (i, j) = actual i predicted j."""
    predicted = np.asarray(predicted, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    if predicted.shape != actual.shape or predicted.ndim != 1:
        raise ValueError(
            f"labels must be equal-length vectors, got {predicted.shape} and {actual.shape}"
        )
    for name, arr in (("predicted", predicted), ("actual", actual)):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} contains labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (actual, predicted), 1)
    return cm


@dataclass
class ClassMetrics:
    sensitivity: float | None
    specificity: float | None


def _safe_ratio(num: int, den: int) -> float | None:
    if den == 0:
        return None
    return num / den


def sensitivity_specificity(cm: np.ndarray) -> list[ClassMetrics]:
    """One-vs-rest sensitivity TP/(TP+FN) and specificity TN/(TN+FP) per class."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    total = int(cm.sum())
    out = []
    for c in range(cm.shape[0]):
        tp = int(cm[c, c])
        fn = int(cm[c].sum()) - tp
        fp = int(cm[:, c].sum()) - tp
        tn = total - tp - fn - fp
        out.append(ClassMetrics(_safe_ratio(tp, tp + fn), _safe_ratio(tn, tn + fp)))
    return out


def accuracy_from_confusion(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm) / total)


# --- multi-run aggregation ----------------------------------------------------

@dataclass
class RunAggregate:
    """Summed confusion matrix plus per-class metric spreads across runs.

    ``sensitivity_mean`` etc. are computed over the per-run metrics with
    population (ddof=0) standard deviation; runs where a metric is undefined
    are left out of that class's statistics. ``pooled`` holds the metrics of
    the summed matrix itself.
    """

    total_confusion: np.ndarray
    num_runs: int
    sensitivity_mean: list[float | None]
    sensitivity_std: list[float | None]
    specificity_mean: list[float | None]
    specificity_std: list[float | None]
    pooled: list[ClassMetrics] = field(default_factory=list)


def _spread(values: list[float | None], ddof: int) -> tuple[float | None, float | None]:
    present = np.array([v for v in values if v is not None], dtype=np.float64)
    if len(present) == 0:
        return None, None
    std = float(present.std(ddof=ddof)) if len(present) > ddof else None
    return float(present.mean()), std


def aggregate_runs(matrices: list[np.ndarray], ddof: int = 0) -> RunAggregate:
    """``ddof=0`` (default) gives the population standard deviation; pass 1
    for the sample statistic."""
    if not matrices:
        raise ValueError("need at least one confusion matrix")
    shapes = {np.asarray(m).shape for m in matrices}
    if len(shapes) != 1:
        raise ValueError(f"confusion matrices disagree on shape: {sorted(shapes)}")
    total = np.sum([np.asarray(m, dtype=np.int64) for m in matrices], axis=0)
    per_run = [sensitivity_specificity(m) for m in matrices]
    k = total.shape[0]
    sens_mean, sens_std, spec_mean, spec_std = [], [], [], []
    for c in range(k):
        m, s = _spread([run[c].sensitivity for run in per_run], ddof)
        sens_mean.append(m)
        sens_std.append(s)
        m, s = _spread([run[c].specificity for run in per_run], ddof)
        spec_mean.append(m)
        spec_std.append(s)
    return RunAggregate(
        total_confusion=total,
        num_runs=len(matrices),
        sensitivity_mean=sens_mean,
        sensitivity_std=sens_std,
        specificity_mean=spec_mean,
        specificity_std=spec_std,
        pooled=sensitivity_specificity(total),
    )


# --- model evaluation over a dataset -----------------------------------------

@dataclass
class EvalResult:
    confusion: np.ndarray
    per_class: list[ClassMetrics]
    accuracy: float
    y_true: np.ndarray
    y_pred: np.ndarray
    probabilities: np.ndarray


def evaluate_model(model: ModelGraph, dataset, batch_size: int = 32) -> EvalResult:
    num_classes = len(model.class_names)
    probs = []
    ys = []
    for start in range(0, len(dataset), batch_size):
        pairs = [dataset.load(i) for i in range(start, min(start + batch_size, len(dataset)))]
        xs = np.stack([p[0] for p in pairs]).astype(np.float32)
        ys.extend(p[1] for p in pairs)
        probs.append(model.forward(xs).probabilities)
    probabilities = np.concatenate(probs, axis=0)
    y_true = np.asarray(ys, dtype=np.int64)
    y_pred = probabilities.argmax(axis=1)
    cm = confusion_matrix(y_pred, y_true, num_classes)
    return EvalResult(
        confusion=cm,
        per_class=sensitivity_specificity(cm),
        accuracy=accuracy_from_confusion(cm),
        y_true=y_true,
        y_pred=y_pred,
        probabilities=probabilities,
    )


# --- embeddings and PCA -------------------------------------------------------

@dataclass
class Embeddings:
    vectors: np.ndarray  # [N, F] pooled final features
    labels: list[str]
    ids: list[str]
    skipped: list[str] = field(default_factory=list)


def extract_embeddings(model: ModelGraph, dataset, batch_size: int = 32) -> Embeddings:
    """Pooled final-feature vectors per sample, with label/id metadata.

    Samples that fail to load are skipped (and logged), so one corrupt file
    does not abort an export.
    """
    records = getattr(dataset, "records", None)
    loaded = []
    skipped = []
    for i in range(len(dataset)):
        sample_id = records[i].image_path if records else str(i)
        try:
            loaded.append((sample_id, dataset.load(i)))
        except Exception as e:  # decode/io failures only skip the row
            logging.getLogger(__name__).warning("skipping %s: %s", sample_id, e)
            skipped.append(sample_id)
    vecs = []
    labels = []
    ids = []
    for start in range(0, len(loaded), batch_size):
        chunk = loaded[start : start + batch_size]
        xs = np.stack([pair[0] for _, pair in chunk]).astype(np.float32)
        out = model.forward(xs)
        vecs.append(out.final_features.mean(axis=(2, 3)))
        for sample_id, (_, label) in chunk:
            if isinstance(label, (int, np.integer)):
                label = model.class_names[int(label)]
            labels.append(label)
            ids.append(sample_id)
    vectors = (
        np.concatenate(vecs, axis=0) if vecs else np.empty((0, 0), dtype=np.float32)
    )
    return Embeddings(vectors, labels, ids, skipped)


@dataclass
class PCAResult:
    projected: np.ndarray  # [N, k]
    components: np.ndarray  # [k, D] rows are principal axes
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray
    rank_deficient: bool


def pca_project(data: np.ndarray, k: int) -> PCAResult:
    """Project onto the top-k principal axes of the centered data (via SVD).

    Axes follow a fixed sign convention: the entry of largest magnitude in
    each component is made positive, so repeated runs agree. When the data
    has rank r < k only r axes come back, with ``rank_deficient`` set.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"data must be [N, D], got shape {x.shape}")
    n, d = x.shape
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    flip = np.sign(vt[np.arange(len(vt)), np.abs(vt).argmax(axis=1)])
    flip[flip == 0] = 1.0
    vt = vt * flip[:, None]
    denom = max(n - 1, 1)
    variance = s**2 / denom
    total = variance.sum()
    ratio = variance / total if total > 0 else np.zeros_like(variance)
    tol = s.max() * max(n, d) * np.finfo(np.float64).eps if len(s) else 0.0
    rank = int((s > tol).sum())
    kept = min(k, rank) if rank > 0 else 0
    return PCAResult(
        projected=centered @ vt[:kept].T,
        components=vt[:kept],
        explained_variance=variance[:kept],
        explained_variance_ratio=ratio[:kept],
        mean=mean,
        rank_deficient=rank < k,
    )


# --- projector export ---------------------------------------------------------

def write_projector_files(embeddings: Embeddings, out_dir: str | Path) -> tuple[Path, Path]:
    """Write vectors.tsv (tab-separated floats) and metadata.tsv (label, id)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vectors_path = out_dir / "vectors.tsv"
    metadata_path = out_dir / "metadata.tsv"
    with open(vectors_path, "w", encoding="utf-8") as fh:
        for row in embeddings.vectors:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    with open(metadata_path, "w", encoding="utf-8") as fh:
        fh.write("label\tid\n")
        for label, sample_id in zip(embeddings.labels, embeddings.ids):
            fh.write(f"{label}\t{sample_id}\n")
    return vectors_path, metadata_path
