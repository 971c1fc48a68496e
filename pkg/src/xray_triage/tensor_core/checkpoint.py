"""Checkpoint container: one JSON header line, then raw little-endian float32 blobs.

The header is a JSON list of ``{"name", "shape", "byte_offset"}`` entries,
terminated by a newline; ``byte_offset`` is relative to the first byte after
that newline. Saving the result of :func:`load_checkpoint` reproduces the file
byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "byte_offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(entries, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"checkpoint {path} has no header line")
    try:
        entries = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint {path} header is not valid JSON: {exc}") from exc
    body = raw[newline + 1 :]
    tensors: dict[str, np.ndarray] = {}
    for entry in entries:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        end = start + 4 * count
        if end > len(body):
            raise CheckpointError(
                f"checkpoint {path}: tensor {entry['name']!r} overruns the blob section"
            )
        arr = np.frombuffer(body[start:end], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = arr.copy()
    return tensors
