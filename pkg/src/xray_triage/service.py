"""HTTP inference service: upload an image, get a gated triage result.

Pipeline for ``POST /api/v1/analyze`` (multipart field ``image``): extension
allowlist check -> decode -> filter network -> (when valid) classifier ->
activation map for the winning class -> persist. The response is the stored
record:

    {request_id, valid, filter_scores, class_scores?, summary, cam_url?,
     pipeline, received_at, completed_at, ...}

``class_scores`` is present iff the filter verdict is valid; ``summary`` is
``invalid_image`` or the argmax class. Disallowed extensions and undecodable
bytes return 415 with code ``not_an_image``; oversize uploads return 413 with
``payload_too_large`` (default limit 10 MiB). The filter admits an image iff
its valid-class score exceeds the configured threshold (default 0.5).

Results persist as JSON lines plus one artifact directory per request (the
uploaded bytes and, when valid, ``cam.png`` rendered at the upload's own
dimensions). The store location comes from, in order: the explicit argument,
the ``XRAY_TRIAGE_STORE`` environment variable, then ``./xray_triage_store``.
Clients may supply a ``request_id`` form field; repeating a known id returns
the stored record instead of recomputing, so retries never duplicate records.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Form, UploadFile
from fastapi.responses import JSONResponse, Response

from . import imaging, synthetic
from .errors import NotAnImageError
from .models import ModelGraph, compute_cam, load_model

ALLOWED_EXTENSIONS = {".png", ".jpg", ".jpeg"}
DEFAULT_MAX_UPLOAD_BYTES = 10 * 1024 * 1024
DISCLAIMER = "Research prototype - not a medical device; not for clinical use."

_EXAMPLE_IDS = [
    ("no_finding_0", "no_finding"),
    ("lung_opacity_0", "lung_opacity"),
    ("covid19_0", "covid19"),
    ("rotated_0", "nonvalid"),
]


def resolve_store_dir(store_dir: str | Path | None) -> Path:
    if store_dir is not None:
        return Path(store_dir)
    env = os.environ.get("XRAY_TRIAGE_STORE")
    if env:
        return Path(env)
    return Path("xray_triage_store")


# --- persistence --------------------------------------------------------------

class ResultStore:
    """Append-only JSONL record log plus per-request artifact directories.

    One lock serializes appends and index updates, so concurrent analyze
    requests never interleave partial lines; reads come from the in-memory
    index of completed (immutable) records. Reloading replays the log; a
    request_id appearing twice keeps its last record. An optional capacity
    evicts the oldest records (and their artifacts) once exceeded.
    """

    def __init__(self, root: str | Path, capacity: int | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.results_path = self.root / "results.jsonl"
        self.artifacts_root = self.root / "artifacts"
        self.artifacts_root.mkdir(exist_ok=True)
        self.capacity = capacity
        self._lock = threading.Lock()
        self._index: dict[str, dict] = {}
        if self.results_path.exists():
            for line in self.results_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    record = json.loads(line)
                    self._index[record["request_id"]] = record

    def get(self, request_id: str) -> dict | None:
        with self._lock:
            return self._index.get(request_id)

    def append(self, record: dict) -> None:
        line = json.dumps(record)
        with self._lock:
            with open(self.results_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
            self._index[record["request_id"]] = record
            if self.capacity is not None and len(self._index) > self.capacity:
                self._evict_locked()

    def _evict_locked(self) -> None:
        ordered = sorted(
            self._index.values(), key=lambda r: (r["completed_at"], r["request_id"])
        )
        for record in ordered[: len(ordered) - self.capacity]:
            rid = record["request_id"]
            del self._index[rid]
            art = self.artifacts_root / rid
            if art.exists():
                for child in art.iterdir():
                    child.unlink()
                art.rmdir()
        with open(self.results_path, "w", encoding="utf-8") as fh:
            for record in sorted(
                self._index.values(), key=lambda r: (r["completed_at"], r["request_id"])
            ):
                fh.write(json.dumps(record) + "\n")

    def history(self, limit: int) -> list[dict]:
        """Most recent first; equal timestamps fall back to request_id order."""
        with self._lock:
            records = list(self._index.values())
        records.sort(key=lambda r: (r["completed_at"], r["request_id"]), reverse=True)
        return records[: max(limit, 0)]

    def artifact_dir(self, request_id: str) -> Path:
        d = self.artifacts_root / request_id
        d.mkdir(parents=True, exist_ok=True)
        return d

    def artifact_path(self, request_id: str, name: str) -> Path:
        return self.artifacts_root / request_id / name

    def writable(self) -> bool:
        try:
            probe = self.root / ".write_probe"
            probe.write_bytes(b"")
            probe.unlink()
            return True
        except OSError:
            return False


# --- heatmap rendering --------------------------------------------------------

def heatmap_ramp() -> np.ndarray:
    """256-entry RGB lookup: dark blue -> cyan -> yellow -> red (piecewise
    linear between stops at 0, 0.35, 0.65 and 1)."""
    stops = np.array([0.0, 0.35, 0.65, 1.0])
    colors = np.array([[0, 0, 128], [0, 200, 255], [255, 255, 0], [255, 0, 0]], dtype=np.float64)
    t = np.linspace(0.0, 1.0, 256)
    ramp = np.stack([np.interp(t, stops, colors[:, c]) for c in range(3)], axis=1)
    return np.floor(ramp + 0.5).astype(np.uint8)


_RAMP = heatmap_ramp()


def colorize_cam(cam: np.ndarray) -> np.ndarray:
    """Map a [0,1] activation map through the 256-entry ramp to RGB uint8."""
    return _RAMP[np.clip(np.floor(cam * 255 + 0.5), 0, 255).astype(np.uint8)]


def render_cam_overlay(base_gray: imaging.ImageBuffer, cam: np.ndarray, alpha: float = 0.4) -> bytes:
    """Blend the colored activation map over the grayscale image at fixed alpha."""
    if cam.shape != (base_gray.height, base_gray.width):
        raise ValueError(
            f"cam shape {cam.shape} != image {base_gray.height}x{base_gray.width}"
        )
    gray = base_gray.pixels[:, :, 0].astype(np.float64)
    heat = colorize_cam(cam).astype(np.float64)
    blended = (1.0 - alpha) * gray[:, :, None] + alpha * heat
    out = np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)
    return imaging.encode_png(imaging.ImageBuffer.from_array(out))


# --- the inference pipeline ---------------------------------------------------

@dataclass
class ModelBundle:
    filter_net: ModelGraph
    classifier: ModelGraph

    @classmethod
    def load(cls, model_dir: str | Path) -> "ModelBundle":
        model_dir = Path(model_dir)
        return cls(load_model(model_dir, "filter"), load_model(model_dir, "covid"))


def _error(status: int, code: str, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message, **extra})


def analyze_image(
    bundle: ModelBundle, img: imaging.ImageBuffer, threshold: float = 0.5
) -> tuple[dict, np.ndarray | None]:
    """Run the filter gate and, only when it passes, the classifier.

    Returns the result fields plus the activation map (already at the image's
    own dimensions) or None for rejected images.
    """
    fsize = bundle.filter_net.config.input_size
    fx = imaging.normalize(
        imaging.resize_bilinear(imaging.to_grayscale(img), fsize, fsize), "unit_interval"
    )
    fprobs = bundle.filter_net.forward(fx[None]).probabilities[0]
    filter_scores = {
        name: float(fprobs[i]) for i, name in enumerate(bundle.filter_net.class_names)
    }
    valid = filter_scores["valid"] > threshold
    if not valid:
        return {
            "valid": False,
            "filter_scores": filter_scores,
            "summary": "invalid_image",
            "pipeline": ["extension_check", "decode", "filter"],
        }, None

    csize = bundle.classifier.config.input_size
    cx = imaging.normalize(imaging.resize_bilinear(img, csize, csize), "imagenet_stats")
    cout = bundle.classifier.forward(cx[None])
    cprobs = cout.probabilities[0]
    predicted = int(cprobs.argmax())
    cam = compute_cam(
        cout.final_features[0], bundle.classifier.head_weights(), predicted,
        img.height, img.width,
    )
    return {
        "valid": True,
        "filter_scores": filter_scores,
        "class_scores": {
            name: float(cprobs[i]) for i, name in enumerate(bundle.classifier.class_names)
        },
        "summary": bundle.classifier.class_names[predicted],
        "pipeline": ["extension_check", "decode", "filter", "classifier", "cam"],
    }, cam


def _valid_request_id(request_id: str) -> bool:
    return 0 < len(request_id) <= 64 and all(c.isalnum() or c in "-_" for c in request_id)


def create_app(
    model_dir: str | Path,
    store_dir: str | Path | None = None,
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD_BYTES,
    filter_threshold: float = 0.5,
    store_capacity: int | None = None,
) -> FastAPI:
    bundle = ModelBundle.load(model_dir)
    store = ResultStore(resolve_store_dir(store_dir), capacity=store_capacity)
    app = FastAPI(title="xray-triage", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.bundle = bundle

    @app.get("/healthz")
    def healthz():
        problems = []
        if not store.writable():
            problems.append("store directory is not writable")
        body = {
            "status": "ok" if not problems else "degraded",
            "checkpoints": {
                "filter": str(Path(model_dir) / "filter.ckpt"),
                "classifier": str(Path(model_dir) / "covid.ckpt"),
            },
            "classes": bundle.classifier.class_names,
            "store_writable": store.writable(),
        }
        if problems:
            body["reasons"] = problems
            return JSONResponse(status_code=503, content=body)
        return body

    @app.post("/api/v1/analyze")
    def analyze(image: UploadFile, request_id: str | None = Form(default=None)):
        if request_id is not None:
            if not _valid_request_id(request_id):
                return _error(400, "bad_request_id",
                              "request_id must be 1-64 characters of [A-Za-z0-9_-]")
            existing = store.get(request_id)
            if existing is not None:
                return existing
        suffix = Path(image.filename or "").suffix.lower()
        if suffix not in ALLOWED_EXTENSIONS:
            return _error(
                415, "not_an_image",
                f"extension {suffix or '(none)'} not allowed; use one of "
                + ", ".join(sorted(ALLOWED_EXTENSIONS)),
            )
        received_at = datetime.now(timezone.utc).isoformat()
        data = image.file.read(max_upload_bytes + 1)
        if len(data) > max_upload_bytes:
            return _error(413, "payload_too_large",
                          f"upload exceeds {max_upload_bytes} bytes")
        try:
            img = imaging.decode_image(data)
        except NotAnImageError as e:
            return _error(415, "not_an_image",
                          "could not decode the upload as an image",
                          sniffed_format=e.sniffed_format)

        rid = request_id or uuid.uuid4().hex
        result, cam = analyze_image(bundle, img, threshold=filter_threshold)
        store.artifact_dir(rid)
        store.artifact_path(rid, f"upload{suffix}").write_bytes(data)
        cam_url = None
        if cam is not None:
            overlay = render_cam_overlay(imaging.to_grayscale(img), cam)
            store.artifact_path(rid, "cam.png").write_bytes(overlay)
            cam_url = f"/api/v1/artifacts/{rid}/cam.png"
        record = {
            "request_id": rid,
            "original_filename": image.filename,
            "received_at": received_at,
            "completed_at": datetime.now(timezone.utc).isoformat(),
            "cam_url": cam_url,
            "disclaimer": DISCLAIMER,
            **result,
        }
        store.append(record)
        return record

    @app.get("/api/v1/results/{request_id}")
    def get_result(request_id: str):
        record = store.get(request_id)
        if record is None:
            return _error(404, "not_found", f"no result with id {request_id!r}")
        return record

    @app.get("/api/v1/history")
    def history(limit: int = 20):
        return store.history(limit)

    @app.get("/api/v1/artifacts/{request_id}/cam.png")
    def cam_artifact(request_id: str):
        path = store.artifact_path(request_id, "cam.png")
        if not _valid_request_id(request_id) or not path.exists():
            return _error(404, "not_found", f"no activation map for id {request_id!r}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/api/v1/examples")
    def examples():
        return {
            "examples": [
                {"id": ex_id, "label": label, "url": f"/api/v1/examples/{ex_id}.png"}
                for ex_id, label in _EXAMPLE_IDS
            ]
        }

    @app.get("/api/v1/examples/{example_id}.png")
    def example_image(example_id: str):
        match = {ex_id: label for ex_id, label in _EXAMPLE_IDS}.get(example_id)
        if match is None:
            return _error(404, "not_found", f"no example {example_id!r}")
        size = bundle.classifier.config.input_size
        rng = np.random.default_rng(sum(example_id.encode()))
        if match == "nonvalid":
            img = imaging.rotate_quarter(synthetic.upright_image(rng, size), 1)
        else:
            img = synthetic.class_image(rng, match, size)
        return Response(content=imaging.encode_png(img), media_type="image/png")

    return app
