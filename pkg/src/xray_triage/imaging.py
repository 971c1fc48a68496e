"""Image decoding, preprocessing, and the two seeded augmentation pipelines.

Pixel data lives in :class:`ImageBuffer` (uint8, row-major, interleaved
channels). Geometry uses bilinear interpolation with half-pixel centers for
resizing and border replication for small-angle warps; quarter turns are exact
index permutations.

Randomness: every augmentation call owns a ``numpy.random.Generator`` (PCG64;
create with ``np.random.default_rng(seed)``). Draws happen in a fixed,
documented order, so a given (image, spec, seed) triple always produces the
same output.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import NotAnImageError, ShapeError

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

UNIT_INTERVAL = "unit_interval"
IMAGENET_STATS = "imagenet_stats"


@dataclass
class ImageBuffer:
    """A decoded image: uint8 samples shaped [height, width, channels]."""

    height: int
    width: int
    channels: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ShapeError(f"channels must be 1 or 3, got {self.channels}")
        if self.pixels.shape != (self.height, self.width, self.channels):
            raise ShapeError(
                f"pixel block shaped {self.pixels.shape}, expected "
                f"({self.height}, {self.width}, {self.channels})"
            )
        if self.pixels.dtype != np.uint8:
            raise ShapeError(f"pixels must be uint8, got {self.pixels.dtype}")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        if arr.ndim == 2:
            arr = arr[:, :, None]
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        h, w, c = arr.shape
        return cls(h, w, c, arr)


def sniff_format(data: bytes) -> str:
    """Best-effort container identification from magic bytes."""
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return "png"
    if data[:3] == b"\xff\xd8\xff":
        return "jpeg"
    if data[:6] in (b"GIF87a", b"GIF89a"):
        return "gif"
    if data[:2] == b"BM":
        return "bmp"
    if data[:4] in (b"II*\x00", b"MM\x00*"):
        return "tiff"
    if data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return "webp"
    return "unknown"


def decode_image(data: bytes) -> ImageBuffer:
    """Decode PNG/JPEG bytes; grayscale stays single-channel, everything else
    is expanded to RGB. Undecodable bytes raise :class:`NotAnImageError`."""
    fmt = sniff_format(data)
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            if img.mode in ("L",):
                arr = np.asarray(img, dtype=np.uint8)[:, :, None]
            elif img.mode in ("I", "I;16", "F", "LA"):
                arr = np.asarray(img.convert("L"), dtype=np.uint8)[:, :, None]
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise NotAnImageError(f"cannot decode upload as an image: {exc}", fmt) from exc
    h, w = arr.shape[:2]
    return ImageBuffer(h, w, arr.shape[2], np.ascontiguousarray(arr))


def encode_png(img: ImageBuffer) -> bytes:
    arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    mode = "L" if img.channels == 1 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """ITU-R 601 luma (the common integer-weight formula)."""
    if img.channels == 1:
        return img
    p = img.pixels.astype(np.float32)
    luma = p[:, :, 0] * 0.299 + p[:, :, 1] * 0.587 + p[:, :, 2] * 0.114
    return ImageBuffer.from_array(np.floor(luma + 0.5).clip(0, 255).astype(np.uint8))


def replicate_channels(img: ImageBuffer) -> ImageBuffer:
    if img.channels == 3:
        return img
    return ImageBuffer.from_array(np.repeat(img.pixels, 3, axis=2))


def bilinear_resize_floats(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a float array [H,W] or [H,W,C], half-pixel centers.

    Source coordinate of output cell i is (i + 0.5) * in/out - 0.5, clamped to
    the valid index range, so outputs are convex combinations of inputs.
    """
    squeeze = plane.ndim == 2
    if squeeze:
        plane = plane[:, :, None]
    in_h, in_w, _ = plane.shape
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = plane[y0][:, x0] * (1 - wx) + plane[y0][:, x1] * wx
    bot = plane[y1][:, x0] * (1 - wx) + plane[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out[:, :, 0] if squeeze else out


def resize_bilinear(img: ImageBuffer, out_h: int, out_w: int) -> ImageBuffer:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target must be >= 1, got {out_h}x{out_w}")
    if (out_h, out_w) == (img.height, img.width):
        return ImageBuffer.from_array(img.pixels.copy())
    out = bilinear_resize_floats(img.pixels.astype(np.float64), out_h, out_w)
    return ImageBuffer.from_array(np.floor(out + 0.5).clip(0, 255).astype(np.uint8))


def normalize(img: ImageBuffer, mode: str) -> np.ndarray:
    """To a float32 [C,H,W] tensor. ``unit_interval`` maps [0,255] to [0,1];
    ``imagenet_stats`` additionally centers/scales per channel (grayscale is
    replicated to 3 channels first)."""
    if mode == UNIT_INTERVAL:
        chw = img.pixels.astype(np.float32).transpose(2, 0, 1) / 255.0
        return np.ascontiguousarray(chw)
    if mode == IMAGENET_STATS:
        rgb = replicate_channels(img)
        chw = rgb.pixels.astype(np.float32).transpose(2, 0, 1) / 255.0
        chw = (chw - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]
        return np.ascontiguousarray(chw)
    raise ValueError(f"unknown normalization mode {mode!r}")


def rotate_quarter(img: ImageBuffer, turns: int) -> ImageBuffer:
    """Exact clockwise quarter turns (index permutation, no interpolation)."""
    if turns not in (1, 2, 3):
        raise ValueError(f"turns must be 1, 2 or 3, got {turns}")
    return ImageBuffer.from_array(np.ascontiguousarray(np.rot90(img.pixels, k=-turns)))


def _warp_affine(pixels: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Inverse-map warp with bilinear sampling and border replication.

    ``matrix`` is the 2x3 output->source map in index coordinates about the
    image center ((h-1)/2, (w-1)/2).
    """
    h, w, _ = pixels.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    dy, dx = yy - cy, xx - cx
    src_y = matrix[0, 0] * dy + matrix[0, 1] * dx + matrix[0, 2] + cy
    src_x = matrix[1, 0] * dy + matrix[1, 1] * dx + matrix[1, 2] + cx
    src_y = np.clip(src_y, 0, h - 1)
    src_x = np.clip(src_x, 0, w - 1)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (src_y - y0)[:, :, None]
    wx = (src_x - x0)[:, :, None]
    p = pixels.astype(np.float64)
    out = (
        p[y0, x0] * (1 - wy) * (1 - wx)
        + p[y0, x1] * (1 - wy) * wx
        + p[y1, x0] * wy * (1 - wx)
        + p[y1, x1] * wy * wx
    )
    return np.floor(out + 0.5).clip(0, 255).astype(np.uint8)


def rotate_small(img: ImageBuffer, degrees: float) -> ImageBuffer:
    """Small-angle rotation about the center, bilinear, border replicate."""
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    matrix = np.array([[c, -s, 0.0], [s, c, 0.0]])
    return ImageBuffer.from_array(_warp_affine(img.pixels, matrix))


def zoom(img: ImageBuffer, factor: float) -> ImageBuffer:
    """Scale about the center by ``factor`` (>1 zooms in), border replicate."""
    if factor <= 0:
        raise ValueError(f"zoom factor must be positive, got {factor}")
    inv = 1.0 / factor
    matrix = np.array([[inv, 0.0, 0.0], [0.0, inv, 0.0]])
    return ImageBuffer.from_array(_warp_affine(img.pixels, matrix))


def hflip(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer.from_array(np.ascontiguousarray(img.pixels[:, ::-1]))


def adjust_brightness(img: ImageBuffer, delta_unit: float) -> ImageBuffer:
    """Additive brightness in unit scale (delta of 0.2 adds 51 levels), clamped."""
    shifted = img.pixels.astype(np.float64) + delta_unit * 255.0
    return ImageBuffer.from_array(np.floor(shifted + 0.5).clip(0, 255).astype(np.uint8))


def occlude_top(img: ImageBuffer, fraction: float) -> ImageBuffer:
    rows = int(round(img.height * fraction))
    if rows <= 0:
        return img
    out = img.pixels.copy()
    out[:rows] = 0
    return ImageBuffer.from_array(out)


def crop_and_resize_back(img: ImageBuffer, scale: float, off_y: float, off_x: float) -> ImageBuffer:
    """Take a relative-size ``scale`` crop at fractional offsets, resize back."""
    ch = max(1, int(round(img.height * scale)))
    cw = max(1, int(round(img.width * scale)))
    y0 = int(round((img.height - ch) * off_y))
    x0 = int(round((img.width - cw) * off_x))
    crop = ImageBuffer.from_array(np.ascontiguousarray(img.pixels[y0 : y0 + ch, x0 : x0 + cw]))
    return resize_bilinear(crop, img.height, img.width)


@dataclass
class AugmentSpec:
    """Knobs for one augmentation pipeline; zero magnitudes disable a transform."""

    pipeline: str  # "filter" | "classifier"
    max_rotation_deg: float = 0.0
    max_zoom_fraction: float = 0.0
    hflip_prob: float = 0.0
    brightness_delta: float = 0.0
    top_occlusion_max_fraction: float = 0.0
    crop_scale_range: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        for name in ("max_zoom_fraction", "hflip_prob", "brightness_delta",
                     "top_occlusion_max_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0,1], got {v}")
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop_scale_range must satisfy 0 < lo <= hi <= 1, got {lo},{hi}")

    @classmethod
    def filter_pipeline(cls) -> "AugmentSpec":
        return cls(pipeline="filter", max_rotation_deg=5.0, max_zoom_fraction=0.10)

    @classmethod
    def classifier_pipeline(cls) -> "AugmentSpec":
        return cls(
            pipeline="classifier",
            max_rotation_deg=10.0,
            max_zoom_fraction=0.10,
            hflip_prob=0.5,
            brightness_delta=0.2,
            top_occlusion_max_fraction=0.15,
            crop_scale_range=(0.85, 1.0),
        )


def augment(img: ImageBuffer, spec: AugmentSpec, rng: np.random.Generator) -> ImageBuffer:
    """Apply the pipeline's transforms, each with its own draw, in this order:
    horizontal flip, rotation, zoom, crop, brightness, top occlusion.

    Output dimensions always equal input dimensions. With all magnitudes zero
    (and flip probability zero) the image passes through pixel-identical.
    """
    out = img
    if spec.hflip_prob > 0 and rng.random() < spec.hflip_prob:
        out = hflip(out)
    if spec.max_rotation_deg > 0:
        out = rotate_small(out, rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg))
    if spec.max_zoom_fraction > 0:
        out = zoom(out, 1.0 + rng.uniform(-spec.max_zoom_fraction, spec.max_zoom_fraction))
    lo, hi = spec.crop_scale_range
    if hi < 1.0 or lo < 1.0:
        scale = rng.uniform(lo, hi)
        if scale < 1.0:
            out = crop_and_resize_back(out, scale, rng.random(), rng.random())
    if spec.brightness_delta > 0:
        out = adjust_brightness(out, rng.uniform(-spec.brightness_delta, spec.brightness_delta))
    if spec.top_occlusion_max_fraction > 0:
        out = occlude_top(out, rng.uniform(0, spec.top_occlusion_max_fraction))
    return out
