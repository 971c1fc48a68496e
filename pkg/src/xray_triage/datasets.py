"""Manifest ingestion, label harmonization, splitting, and sampling plans.

Data enters as a declarative CSV manifest (one row per image) rather than by
pulling live repositories; the loader validates the schema and the task's
label vocabulary. All randomized operations are pure functions of their seed.

Rotated negatives for the filter task are *derived* records: the source path
gains a ``#rot90``/``#rot180``/``#rot270`` fragment and the image is rotated
at load time, so no pixels are duplicated on disk.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ManifestError

DATASET_IDS = {"cohen", "figure1", "chest_xray", "rsna", "local"}
PATIENT_REQUIRED = {"cohen", "figure1"}

FILTER_LABELS = {"valid", "nonvalid"}
CLASSIFIER_LABELS = {"no_finding", "lung_opacity", "covid19"}
# Raw community labels accepted on ingestion; harmonize_labels folds them in.
LABEL_ALIASES = {
    "normal": "no_finding",
    "pneumonia": "lung_opacity",
    "viral pneumonia": "lung_opacity",
    "virus pneumonia": "lung_opacity",
    "bacterial pneumonia": "lung_opacity",
}
VIEWS = {"AP", "PA", "other"}
SPLITS = ("train", "validation", "test")

MANIFEST_COLUMNS = ["image_path", "dataset_id", "patient_id", "label", "view", "split"]


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    dataset_id: str
    label: str
    patient_id: str | None = None
    view: str | None = None
    split: str | None = None


@dataclass
class Manifest:
    records: list[SampleRecord]
    task: str  # "filter" | "classifier"

    def class_counts(self) -> dict[str, int]:
        return dict(Counter(r.label for r in self.records))

    def __len__(self):
        return len(self.records)


def source_path_and_turns(image_path: str) -> tuple[str, int]:
    """Split a possibly-derived path into (source path, quarter turns)."""
    if "#rot" in image_path:
        base, _, deg = image_path.rpartition("#rot")
        return base, int(deg) // 90
    return image_path, 0


def _infer_task(labels: set[str]) -> str:
    canonical = {LABEL_ALIASES.get(l, l) for l in labels}
    if canonical <= FILTER_LABELS:
        return "filter"
    if canonical <= CLASSIFIER_LABELS:
        return "classifier"
    raise ManifestError(
        [f"labels mix the filter and classifier vocabularies: {sorted(canonical)}"]
    )


def load_manifest(path: str | Path, task: str | None = None) -> Manifest:
    """Parse and validate a manifest CSV; errors are itemized by row number.

    Row numbers refer to lines in the file (the header is row 1).
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError([f"manifest file not found: {path}"])
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != set(MANIFEST_COLUMNS):
            raise ManifestError(
                [f"header must be exactly {MANIFEST_COLUMNS}, got {reader.fieldnames}"]
            )
        errors: list[str] = []
        records: list[SampleRecord] = []
        seen_paths: set[str] = set()
        for row_num, row in enumerate(reader, start=2):
            image_path = (row["image_path"] or "").strip()
            dataset_id = (row["dataset_id"] or "").strip()
            patient_id = (row["patient_id"] or "").strip() or None
            label = (row["label"] or "").strip().lower()
            view = (row["view"] or "").strip() or None
            split = (row["split"] or "").strip() or None
            if not image_path:
                errors.append(f"row {row_num}: empty image_path")
            elif image_path in seen_paths:
                errors.append(f"row {row_num}: duplicate image_path {image_path!r}")
            seen_paths.add(image_path)
            if dataset_id not in DATASET_IDS:
                errors.append(f"row {row_num}: unknown dataset_id {dataset_id!r}")
            known = FILTER_LABELS | CLASSIFIER_LABELS | set(LABEL_ALIASES)
            if label not in known:
                errors.append(f"row {row_num}: unknown label {row['label']!r}")
            if dataset_id in PATIENT_REQUIRED and patient_id is None:
                errors.append(
                    f"row {row_num}: dataset {dataset_id!r} requires a patient_id"
                )
            if view is not None and view not in VIEWS:
                errors.append(f"row {row_num}: view must be one of {sorted(VIEWS)}, got {view!r}")
            if split is not None and split not in SPLITS:
                errors.append(f"row {row_num}: split must be one of {SPLITS}, got {split!r}")
            records.append(
                SampleRecord(image_path, dataset_id, label, patient_id, view, split)
            )
    if errors:
        raise ManifestError(errors)
    if not records:
        raise ManifestError(["manifest has no data rows"])
    inferred = _infer_task({r.label for r in records})
    if task is not None and task != inferred:
        raise ManifestError([f"manifest labels imply task {inferred!r}, expected {task!r}"])
    return Manifest(records, inferred)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            writer.writerow(
                [r.image_path, r.dataset_id, r.patient_id or "", r.label, r.view or "",
                 r.split or ""]
            )


def harmonize_labels(manifest: Manifest) -> Manifest:
    """Fold community label spellings into the canonical classifier set."""
    if manifest.task != "classifier":
        raise ValueError("harmonize_labels applies to classifier manifests")
    records = [
        replace(r, label=LABEL_ALIASES.get(r.label, r.label)) for r in manifest.records
    ]
    return Manifest(records, manifest.task)


def stage1_relabel(manifest: Manifest) -> Manifest:
    """Fold the scarce third class into lung_opacity for first-stage training."""
    if manifest.task != "classifier":
        raise ValueError("stage1_relabel applies to classifier manifests")
    records = [
        replace(r, label="lung_opacity") if r.label == "covid19" else r
        for r in manifest.records
    ]
    return Manifest(records, manifest.task)


def synthesize_filter_negatives(manifest: Manifest, fraction: float, seed: int) -> Manifest:
    """Derive quarter-turned negative records from a fraction of the valid images.

    Each selected source yields three records (90, 180, 270 degrees) labeled
    ``nonvalid``; the rotation is encoded in the path fragment and applied when
    the image is loaded.
    """
    if manifest.task != "filter":
        raise ValueError("synthesize_filter_negatives applies to filter manifests")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0,1], got {fraction}")
    sources = [r for r in manifest.records if r.label == "valid"]
    k = int(round(fraction * len(sources)))
    if k == 0:
        return Manifest(list(manifest.records), manifest.task)
    rng = np.random.default_rng(seed)
    chosen_idx = sorted(rng.choice(len(sources), size=k, replace=False).tolist())
    derived = []
    for i in chosen_idx:
        src = sources[i]
        for turns in (1, 2, 3):
            derived.append(
                replace(src, image_path=f"{src.image_path}#rot{90 * turns}", label="nonvalid")
            )
    return Manifest(list(manifest.records) + derived, manifest.task)


@dataclass
class SplitAssignment:
    by_path: dict[str, str]
    strategy: str
    seed: int
    warnings: list[str] = field(default_factory=list)

    def of(self, record: SampleRecord) -> str:
        return self.by_path[record.image_path]

    def select(self, manifest: Manifest, split: str) -> list[SampleRecord]:
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
        return [r for r in manifest.records if self.by_path[r.image_path] == split]

    def counts(self) -> dict[str, int]:
        return dict(Counter(self.by_path.values()))


def _cut_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    # Round validation/test down; the remainder goes to train.
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    return n - n_val - n_test, n_val, n_test


def split(
    manifest: Manifest,
    strategy: str,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Partition samples into train/validation/test.

    ``by_patient`` shuffles patient ids and cuts on patient counts, so every
    image of a patient lands in one split; ``random`` does the same on
    samples; ``predefined`` reads the manifest's split column.
    """
    if strategy not in ("by_patient", "random", "predefined"):
        raise ValueError(f"unknown split strategy {strategy!r}")
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    by_path: dict[str, str] = {}

    if strategy == "by_patient":
        missing = [r.image_path for r in manifest.records if r.patient_id is None]
        if missing:
            raise ValueError(
                f"by_patient split requires patient_id on every record; "
                f"missing for {len(missing)} records (first: {missing[0]!r})"
            )
        patients = sorted({r.patient_id for r in manifest.records})
        order = list(patients)
        rng.shuffle(order)
        n_train, n_val, _ = _cut_counts(len(order), ratios)
        patient_split = {}
        for i, pid in enumerate(order):
            if i < n_train:
                patient_split[pid] = "train"
            elif i < n_train + n_val:
                patient_split[pid] = "validation"
            else:
                patient_split[pid] = "test"
        for r in manifest.records:
            by_path[r.image_path] = patient_split[r.patient_id]
    elif strategy == "random":
        order = list(range(len(manifest.records)))
        rng.shuffle(order)
        n_train, n_val, _ = _cut_counts(len(order), ratios)
        for pos, idx in enumerate(order):
            which = "train" if pos < n_train else (
                "validation" if pos < n_train + n_val else "test"
            )
            by_path[manifest.records[idx].image_path] = which
    else:  # predefined
        missing = [r.image_path for r in manifest.records if r.split is None]
        if missing:
            raise ValueError(
                f"predefined split requires the split column on every record; "
                f"missing for {len(missing)} records (first: {missing[0]!r})"
            )
        for r in manifest.records:
            by_path[r.image_path] = r.split

    assignment = SplitAssignment(by_path, strategy, seed)

    # Empty-class warnings: only for classes populous enough that an empty
    # split is surprising (>= 3 patients under by_patient, >= 3 samples else).
    for label in sorted({r.label for r in manifest.records}):
        recs = [r for r in manifest.records if r.label == label]
        population = (
            len({r.patient_id for r in recs}) if strategy == "by_patient" else len(recs)
        )
        if population < 3:
            continue
        present = {by_path[r.image_path] for r in recs}
        for which in SPLITS:
            if which not in present:
                assignment.warnings.append(
                    f"class {label!r} has no samples in the {which} split"
                )
    return assignment


@dataclass
class SamplingPlan:
    """One epoch's index sequence over a training subset (positional indices)."""

    indices: np.ndarray
    target: str  # "equalized" | "natural"
    seed: int
    class_draw_counts: dict[str, int] = field(default_factory=dict)


def sampling_plan(
    labels: list[str], target: str, seed: int, epoch_length: int | None = None
) -> SamplingPlan:
    """Build an epoch plan over a label sequence.

    ``equalized`` gives every class an equal draw quota (remainder spread by a
    seeded draw); within a class the pool is tiled and topped up by a seeded
    no-replacement draw, so minorities repeat while balanced classes at their
    natural length reproduce a pure permutation. ``natural`` is a plain seeded
    shuffle of every index exactly once.
    """
    if target not in ("equalized", "natural"):
        raise ValueError(f"unknown sampling target {target!r}")
    rng = np.random.default_rng(seed)
    n = len(labels)
    if n == 0:
        raise ValueError("cannot build a sampling plan over an empty subset")
    if target == "natural":
        idx = np.arange(n)
        rng.shuffle(idx)
        plan = SamplingPlan(idx, target, seed)
    else:
        classes = sorted(set(labels))
        members = {c: np.flatnonzero([l == c for l in labels]) for c in classes}
        for c, m in members.items():
            if len(m) == 0:
                raise ValueError(f"class {c!r} is empty; cannot equalize")
        length = epoch_length if epoch_length is not None else n
        base, rem = divmod(length, len(classes))
        quotas = {c: base for c in classes}
        for ci in rng.choice(len(classes), size=rem, replace=False):
            quotas[classes[int(ci)]] += 1
        parts = []
        for c in classes:
            pool = members[c]
            reps, extra = divmod(quotas[c], len(pool))
            part = [np.tile(pool, reps)]
            if extra:
                part.append(rng.choice(pool, size=extra, replace=False))
            parts.append(np.concatenate(part) if part else np.empty(0, dtype=np.int64))
        idx = np.concatenate(parts).astype(np.int64)
        rng.shuffle(idx)
        plan = SamplingPlan(idx, target, seed)
    plan.class_draw_counts = dict(Counter(labels[int(i)] for i in plan.indices))
    return plan


def make_sampling_plan(
    manifest: Manifest,
    assignment: SplitAssignment,
    target: str,
    seed: int,
    epoch_length: int | None = None,
) -> SamplingPlan:
    """Plan one training epoch; indices are positions within the train subset
    (the order returned by ``assignment.select(manifest, "train")``)."""
    train = assignment.select(manifest, "train")
    if not train:
        raise ValueError("training split is empty")
    return sampling_plan([r.label for r in train], target, seed, epoch_length)


def clean_with_filter(
    manifest: Manifest, is_valid: Callable[[SampleRecord], bool]
) -> tuple[Manifest, list[SampleRecord]]:
    """Optional pre-split cleaning pass: drop records the validity predicate
    rejects (e.g. a trained filter net run over the images). Returns the
    cleaned manifest plus the removed records, preserving order."""
    kept = [r for r in manifest.records if is_valid(r)]
    removed = [r for r in manifest.records if not is_valid(r)]
    return Manifest(kept, manifest.task), removed
