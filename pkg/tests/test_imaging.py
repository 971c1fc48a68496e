"""Image I/O, resize, normalization, and augmentation tests.

The bilinear resize is checked two ways: against a nested-loop reference using
the same half-pixel convention, and against hand-worked pixel values for a
2x2 checkerboard."""

from __future__ import annotations

import io

import numpy as np
import pytest
from PIL import Image

from xray_triage import imaging
from xray_triage.errors import NotAnImageError, ShapeError
from xray_triage.imaging import AugmentSpec, ImageBuffer


def bilinear_ref(plane, out_h, out_w):
    """Loop reference: source of output cell i is (i + 0.5) * in/out - 0.5."""
    in_h, in_w = plane.shape
    out = np.zeros((out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        for j in range(out_w):
            y = min(max((i + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1)
            x = min(max((j + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
            fy, fx = y - y0, x - x0
            top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
            bot = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


def gray(arr):
    return ImageBuffer.from_array(np.asarray(arr, dtype=np.uint8))


class TestDecodeEncode:
    def test_png_round_trip_preserves_pixels(self):
        rng = np.random.default_rng(0)
        img = gray(rng.integers(0, 256, (9, 7), dtype=np.uint8))
        back = imaging.decode_image(imaging.encode_png(img))
        assert back.channels == 1
        np.testing.assert_array_equal(back.pixels, img.pixels)

    def test_one_by_one_white_png(self):
        buf = io.BytesIO()
        Image.new("L", (1, 1), 255).save(buf, format="PNG")
        img = imaging.decode_image(buf.getvalue())
        assert (img.height, img.width, img.channels) == (1, 1, 1)
        assert img.pixels[0, 0, 0] == 255

    def test_rgb_jpeg_decodes_to_three_channels(self):
        buf = io.BytesIO()
        Image.new("RGB", (5, 4), (10, 200, 30)).save(buf, format="JPEG")
        img = imaging.decode_image(buf.getvalue())
        assert img.channels == 3
        assert (img.height, img.width) == (4, 5)

    def test_palette_image_expands_to_rgb(self):
        buf = io.BytesIO()
        Image.new("RGB", (3, 3), (250, 1, 1)).convert("P").save(buf, format="PNG")
        img = imaging.decode_image(buf.getvalue())
        assert img.channels == 3

    def test_text_bytes_raise_not_an_image(self):
        with pytest.raises(NotAnImageError) as exc:
            imaging.decode_image(b"this is not an image at all, just text\n")
        assert exc.value.sniffed_format == "unknown"

    def test_truncated_jpeg_reports_sniffed_format(self):
        with pytest.raises(NotAnImageError) as exc:
            imaging.decode_image(b"\xff\xd8\xff\xe0" + b"\x00" * 32)
        assert exc.value.sniffed_format == "jpeg"

    def test_sniff_format_magic_bytes(self):
        assert imaging.sniff_format(b"\x89PNG\r\n\x1a\n rest") == "png"
        assert imaging.sniff_format(b"\xff\xd8\xff\xdb") == "jpeg"
        assert imaging.sniff_format(b"GIF89a;") == "gif"
        assert imaging.sniff_format(b"BM0123") == "bmp"
        assert imaging.sniff_format(b"II*\x00") == "tiff"
        assert imaging.sniff_format(b"RIFF1234WEBP") == "webp"
        assert imaging.sniff_format(b"hello") == "unknown"

    def test_buffer_shape_validation(self):
        with pytest.raises(ShapeError):
            ImageBuffer(2, 2, 2, np.zeros((2, 2, 2), dtype=np.uint8))
        with pytest.raises(ShapeError):
            ImageBuffer(2, 2, 1, np.zeros((2, 2, 1), dtype=np.float32))


class TestGrayscale:
    def test_itu_weights_on_single_pixel(self):
        img = ImageBuffer.from_array(np.array([[[100, 50, 200]]], dtype=np.uint8))
        g = imaging.to_grayscale(img)
        # 0.299*100 + 0.587*50 + 0.114*200 = 82.05 -> 82
        assert g.pixels[0, 0, 0] == 82

    def test_gray_input_passes_through(self):
        img = gray([[7, 9]])
        assert imaging.to_grayscale(img) is img

    def test_replicate_channels(self):
        img = gray([[5]])
        rgb = imaging.replicate_channels(img)
        assert rgb.channels == 3
        np.testing.assert_array_equal(rgb.pixels[0, 0], [5, 5, 5])


class TestResize:
    def test_identity_returns_copy(self):
        img = gray(np.arange(12, dtype=np.uint8).reshape(3, 4))
        out = imaging.resize_bilinear(img, 3, 4)
        np.testing.assert_array_equal(out.pixels, img.pixels)
        assert out.pixels is not img.pixels

    def test_constant_image_stays_constant(self):
        img = gray(np.full((5, 5), 77, dtype=np.uint8))
        out = imaging.resize_bilinear(img, 13, 6)
        assert (out.pixels == 77).all()

    def test_checkerboard_hand_values(self):
        img = gray([[0, 255], [255, 0]])
        out = imaging.resize_bilinear(img, 4, 4)
        # center cell (1,1): y=x=0.25 -> 0.75^2*0 + 2*0.75*0.25*255 + 0.25^2*0
        # = 95.625 -> rounds to 96
        assert out.pixels[1, 1, 0] == 96
        assert out.pixels[0, 0, 0] == 0  # clamped corner hits the source corner
        assert out.pixels[0, 3, 0] == 255

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(3)
        for in_h, in_w, oh, ow in ((5, 7, 11, 4), (8, 8, 3, 3), (2, 9, 9, 2)):
            plane = rng.uniform(0, 255, (in_h, in_w))
            got = imaging.bilinear_resize_floats(plane, oh, ow)
            np.testing.assert_allclose(got, bilinear_ref(plane, oh, ow), atol=1e-9)

    def test_output_stays_within_input_range(self):
        rng = np.random.default_rng(4)
        plane = rng.uniform(-3, 9, (6, 6))
        out = imaging.bilinear_resize_floats(plane, 17, 5)
        assert out.min() >= plane.min() - 1e-12
        assert out.max() <= plane.max() + 1e-12

    def test_degenerate_target_raises(self):
        with pytest.raises(ShapeError):
            imaging.resize_bilinear(gray([[1]]), 0, 4)


class TestNormalize:
    def test_unit_interval_endpoints(self):
        img = gray([[0, 255]])
        t = imaging.normalize(img, "unit_interval")
        assert t.shape == (1, 1, 2)
        assert t.dtype == np.float32
        np.testing.assert_allclose(t[0, 0], [0.0, 1.0])

    def test_imagenet_stats_endpoints(self):
        black = imaging.normalize(gray([[0]]), "imagenet_stats")
        white = imaging.normalize(gray([[255]]), "imagenet_stats")
        assert black.shape == (3, 1, 1)
        np.testing.assert_allclose(
            black[:, 0, 0], [-2.117904, -2.035714, -1.804444], rtol=1e-5
        )
        np.testing.assert_allclose(
            white[:, 0, 0], [2.248908, 2.428571, 2.640000], rtol=1e-5
        )

    def test_unknown_mode_raises(self):
        with pytest.raises(ValueError, match="normalization"):
            imaging.normalize(gray([[1]]), "zscore")


class TestRotateQuarter:
    def test_one_turn_clockwise(self):
        img = gray([[1, 2], [3, 4]])
        out = imaging.rotate_quarter(img, 1)
        # clockwise: left column becomes top row
        np.testing.assert_array_equal(out.pixels[:, :, 0], [[3, 1], [4, 2]])

    def test_two_turns_is_flip_both_axes(self):
        img = gray([[1, 2], [3, 4]])
        out = imaging.rotate_quarter(img, 2)
        np.testing.assert_array_equal(out.pixels[:, :, 0], [[4, 3], [2, 1]])

    def test_group_property_composition(self):
        rng = np.random.default_rng(5)
        img = gray(rng.integers(0, 256, (6, 4), dtype=np.uint8))
        once_then_twice = imaging.rotate_quarter(imaging.rotate_quarter(img, 1), 2)
        np.testing.assert_array_equal(
            once_then_twice.pixels, imaging.rotate_quarter(img, 3).pixels
        )

    def test_preserves_pixel_multiset(self):
        rng = np.random.default_rng(6)
        img = gray(rng.integers(0, 256, (5, 9), dtype=np.uint8))
        for turns in (1, 2, 3):
            out = imaging.rotate_quarter(img, turns)
            assert sorted(out.pixels.ravel()) == sorted(img.pixels.ravel())

    def test_rejects_zero_and_four(self):
        img = gray([[1]])
        for turns in (0, 4, -1):
            with pytest.raises(ValueError):
                imaging.rotate_quarter(img, turns)


class TestPointTransforms:
    def test_hflip_involution(self):
        rng = np.random.default_rng(7)
        img = gray(rng.integers(0, 256, (4, 6), dtype=np.uint8))
        np.testing.assert_array_equal(
            imaging.hflip(imaging.hflip(img)).pixels, img.pixels
        )

    def test_brightness_adds_exact_levels(self):
        img = gray(np.full((2, 2), 100, dtype=np.uint8))
        out = imaging.adjust_brightness(img, 0.2)
        assert (out.pixels == 151).all()  # 100 + 0.2*255 = 151
        clipped = imaging.adjust_brightness(gray([[250]]), 0.2)
        assert clipped.pixels[0, 0, 0] == 255

    def test_occlude_top_zeroes_requested_rows(self):
        img = gray(np.full((4, 3), 9, dtype=np.uint8))
        out = imaging.occlude_top(img, 0.5)
        assert (out.pixels[:2] == 0).all()
        assert (out.pixels[2:] == 9).all()
        assert imaging.occlude_top(img, 0.0) is img

    def test_zero_rotation_and_unit_zoom_are_identities(self):
        rng = np.random.default_rng(8)
        img = gray(rng.integers(0, 256, (8, 8), dtype=np.uint8))
        np.testing.assert_array_equal(imaging.rotate_small(img, 0.0).pixels, img.pixels)
        np.testing.assert_array_equal(imaging.zoom(img, 1.0).pixels, img.pixels)

    def test_full_scale_crop_is_identity(self):
        rng = np.random.default_rng(9)
        img = gray(rng.integers(0, 256, (6, 6), dtype=np.uint8))
        out = imaging.crop_and_resize_back(img, 1.0, 0.3, 0.8)
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_transforms_preserve_dimensions(self):
        rng = np.random.default_rng(10)
        img = gray(rng.integers(0, 256, (10, 7), dtype=np.uint8))
        for out in (
            imaging.rotate_small(img, 7.5),
            imaging.zoom(img, 1.1),
            imaging.zoom(img, 0.9),
            imaging.crop_and_resize_back(img, 0.85, 0.5, 0.5),
        ):
            assert (out.height, out.width) == (10, 7)


class TestAugment:
    def test_all_zero_spec_is_pixel_identity(self):
        rng = np.random.default_rng(11)
        img = gray(rng.integers(0, 256, (9, 9), dtype=np.uint8))
        spec = AugmentSpec(pipeline="off")
        out = imaging.augment(img, spec, np.random.default_rng(0))
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_same_seed_same_output(self):
        rng = np.random.default_rng(12)
        img = gray(rng.integers(0, 256, (16, 16), dtype=np.uint8))
        spec = AugmentSpec.classifier_pipeline()
        a = imaging.augment(img, spec, np.random.default_rng(42))
        b = imaging.augment(img, spec, np.random.default_rng(42))
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_presets_carry_documented_magnitudes(self):
        f = AugmentSpec.filter_pipeline()
        assert (f.max_rotation_deg, f.max_zoom_fraction) == (5.0, 0.10)
        assert f.hflip_prob == 0.0 and f.crop_scale_range == (1.0, 1.0)
        c = AugmentSpec.classifier_pipeline()
        assert c.max_rotation_deg == 10.0
        assert c.hflip_prob == 0.5
        assert c.brightness_delta == 0.2
        assert c.top_occlusion_max_fraction == 0.15
        assert c.crop_scale_range == (0.85, 1.0)

    def test_output_dimensions_match_input(self):
        rng = np.random.default_rng(13)
        img = gray(rng.integers(0, 256, (20, 14), dtype=np.uint8))
        for seed in range(5):
            out = imaging.augment(img, AugmentSpec.classifier_pipeline(),
                                  np.random.default_rng(seed))
            assert (out.height, out.width) == (20, 14)

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            AugmentSpec(pipeline="x", hflip_prob=1.5)
        with pytest.raises(ValueError):
            AugmentSpec(pipeline="x", crop_scale_range=(0.0, 0.5))
        with pytest.raises(ValueError):
            AugmentSpec(pipeline="x", crop_scale_range=(0.9, 0.8))
