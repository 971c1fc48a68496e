"""Deterministic synthetic chest-image stand-ins for desk-scale runs.

Every image is a grayscale field with a vertical brightness ramp and a bright
band low in the frame, so upright orientation is visually (and statistically)
distinct from any quarter turn. The three triage classes differ in texture:
clean fields, bright localized blobs, and rectified high-frequency stripes.
Patterns are strong enough that the small networks train to high accuracy in
seconds while remaining spatially structured, so activation maps localize.

All generators take an explicit seed and reproduce byte-identical pixel data
for the same (seed, size, counts) arguments.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import imaging
from .datasets import (
    Manifest,
    SampleRecord,
    save_manifest,
    synthesize_filter_negatives,
)
from .models import CLASSIFIER_CLASSES

_CLASS_OFFSET = {"no_finding": -15.0, "lung_opacity": 0.0, "covid19": 15.0}
_CLASS_DATASET = {"no_finding": "rsna", "lung_opacity": "chest_xray", "covid19": "cohen"}


def _base_field(rng: np.random.Generator, size: int, offset: float = 0.0) -> np.ndarray:
    """Upright anatomy stand-in: top-dark ramp, low bright band, mild noise."""
    y = np.linspace(0.0, 1.0, size, dtype=np.float64)[:, None]
    field = 70.0 + 100.0 * y + np.zeros((size, size))
    lo, hi = int(size * 0.78), max(int(size * 0.92), int(size * 0.78) + 1)
    field[lo:hi, :] += 40.0
    field += offset + rng.normal(0.0, 6.0, (size, size))
    return field


def _add_blobs(rng: np.random.Generator, field: np.ndarray) -> None:
    """Scatter a few bright Gaussian blobs through the middle of the frame."""
    size = field.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    radius = max(size / 8.0, 1.5)
    for _ in range(int(rng.integers(3, 6))):
        cy = rng.uniform(0.2, 0.75) * size
        cx = rng.uniform(0.1, 0.9) * size
        field += 70.0 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))


def _add_stripes(
    rng: np.random.Generator,
    field: np.ndarray,
    amplitude: float = 50.0,
    rows: slice | None = None,
) -> None:
    """Rectified vertical stripes over ``rows`` (default: lower two thirds)."""
    size = field.shape[0]
    if rows is None:
        rows = slice(size // 3, size)
    phase = rng.uniform(0.0, 2 * np.pi)
    x = np.arange(size, dtype=np.float64)
    stripes = amplitude * np.abs(np.sin(2 * np.pi * x / (size / 4.0) + phase))
    field[rows, :] += stripes[None, :]


def _to_image(field: np.ndarray) -> imaging.ImageBuffer:
    pixels = np.clip(np.floor(field + 0.5), 0, 255).astype(np.uint8)[:, :, None]
    return imaging.ImageBuffer.from_array(pixels)


def upright_image(rng: np.random.Generator, size: int, offset: float = 0.0) -> imaging.ImageBuffer:
    """A validity-filter positive: upright field, optionally with blobs."""
    field = _base_field(rng, size, offset)
    if rng.random() < 0.5:
        _add_blobs(rng, field)
    return _to_image(field)


def class_image(
    rng: np.random.Generator,
    label: str,
    size: int,
    offset: float = 0.0,
    stripe_amplitude: float = 50.0,
    confusable_shading: bool = False,
) -> imaging.ImageBuffer:
    """A triage-class sample; texture and brightness depend on the label.

    ``stripe_amplitude`` tunes how visible the stripe texture is. With
    ``confusable_shading`` the no-finding class gains apical (top-third)
    shading with the same stripe statistics the covid class then confines to
    the basal third, and the per-class brightness offsets are dropped: the two
    classes share every global intensity statistic and differ only in where
    the texture sits, which a pooled linear readout cannot express without
    location-aware features.
    """
    if label not in _CLASS_OFFSET:
        raise ValueError(f"unknown class {label!r}")
    class_offset = 0.0 if confusable_shading else _CLASS_OFFSET[label]
    field = _base_field(rng, size, offset + class_offset)
    size_third = size // 3
    if label == "lung_opacity":
        _add_blobs(rng, field)
    elif label == "covid19":
        rows = slice(2 * size_third, size) if confusable_shading else None
        _add_stripes(rng, field, stripe_amplitude, rows)
    elif confusable_shading:
        _add_stripes(rng, field, stripe_amplitude, slice(0, size_third))
    return _to_image(field)


# --- in-memory array datasets -------------------------------------------------

def filter_arrays(
    n_valid: int, n_rotated: int, size: int = 32, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Unit-interval tensors [N,1,H,W] with labels 0 = valid, 1 = nonvalid.

    Nonvalid samples are fresh upright draws given 1..3 quarter turns.
    """
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for _ in range(n_valid):
        img = upright_image(rng, size, rng.uniform(-20, 20))
        xs.append(imaging.normalize(img, "unit_interval"))
        ys.append(0)
    for _ in range(n_rotated):
        img = upright_image(rng, size, rng.uniform(-20, 20))
        img = imaging.rotate_quarter(img, int(rng.integers(1, 4)))
        xs.append(imaging.normalize(img, "unit_interval"))
        ys.append(1)
    return np.stack(xs).astype(np.float32), np.array(ys, dtype=np.int64)


def classifier_arrays(
    counts: dict[str, int], size: int = 32, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """ImageNet-normalized tensors [N,3,H,W] with labels indexed per the
    canonical class order."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for label, n in counts.items():
        idx = CLASSIFIER_CLASSES.index(label)
        for _ in range(n):
            img = class_image(rng, label, size, rng.uniform(-10, 10))
            xs.append(imaging.normalize(img, "imagenet_stats"))
            ys.append(idx)
    return np.stack(xs).astype(np.float32), np.array(ys, dtype=np.int64)


# --- materialized datasets with manifests ------------------------------------

def _write_png(img: imaging.ImageBuffer, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(imaging.encode_png(img))


def materialize_filter_dataset(
    out_dir: str | Path,
    n_valid: int = 60,
    size: int = 48,
    seed: int = 0,
    rotation_fraction: float = 0.5,
) -> Path:
    """Write upright PNGs plus a manifest whose nonvalid rows are derived
    rotation records. Returns the manifest path."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_valid):
        rel = f"images/valid_{i:04d}.png"
        _write_png(upright_image(rng, size, rng.uniform(-20, 20)), out_dir / rel)
        records.append(SampleRecord(rel, "local", "valid", f"p{i // 2:04d}", None, None))
    manifest = synthesize_filter_negatives(
        Manifest(records, "filter"), rotation_fraction, seed=seed
    )
    manifest_path = out_dir / "manifest.csv"
    save_manifest(manifest, manifest_path)
    return manifest_path


def materialize_classifier_dataset(
    out_dir: str | Path,
    counts: dict[str, int] | None = None,
    size: int = 48,
    seed: int = 0,
    images_per_patient: int = 2,
) -> Path:
    """Write class-labelled PNGs grouped into small patients; returns the
    manifest path. Patients never span classes, mimicking the source archives."""
    if counts is None:
        counts = {"no_finding": 40, "lung_opacity": 40, "covid19": 24}
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    records = []
    patient_serial = 0
    for label, n in counts.items():
        made = 0
        while made < n:
            patient = f"{label[:3]}_{patient_serial:04d}"
            patient_serial += 1
            patient_offset = rng.uniform(-10, 10)
            for _ in range(min(images_per_patient, n - made)):
                rel = f"images/{label}_{made:04d}.png"
                _write_png(class_image(rng, label, size, patient_offset), out_dir / rel)
                view = "PA" if rng.random() < 0.7 else "AP"
                records.append(
                    SampleRecord(rel, _CLASS_DATASET[label], label, patient, view, None)
                )
                made += 1
    manifest_path = out_dir / "manifest.csv"
    save_manifest(Manifest(records, "classifier"), manifest_path)
    return manifest_path
