"""
Tests for image decoding, grayscale conversion, resizing and masking
"""
import io

import numpy as np
import pytest
from PIL import Image

from selfie_synergy.errors import ArgumentError, ImageDecodeError
from selfie_synergy.imaging import (MaskRect, apply_masks, decode_image, encode_pgm, resize_bilinear,
                                    to_grayscale)


def test_decode_white_pgm():
    """All-255 PGM decodes to 1.0 in every channel"""
    data = b"P5\n2 2\n255\n" + bytes([255] * 4)
    img = decode_image(data)
    assert img.shape == (2, 2, 3)
    assert np.all(img == 1.0)


def test_decode_black_ppm():
    """Single black PPM pixel"""
    img = decode_image(b"P6 1 1 255\n" + bytes([0, 0, 0]))
    assert img.shape == (1, 1, 3)
    assert np.all(img == 0.0)


def test_decode_pure_channels():
    """Hand-encoded 3x1 PPM with red, green and blue pixels"""
    data = b"P6\n3 1\n255\n" + bytes([255, 0, 0, 0, 255, 0, 0, 0, 255])
    img = decode_image(data)
    np.testing.assert_array_equal(img[0], np.eye(3))


def test_decode_header_comment_and_16_bit():
    """Comments are skipped and 16-bit samples are big-endian"""
    data = b"P5\n# made by hand\n1 1\n65535\n" + bytes([0xFF, 0xFF])
    assert decode_image(data)[0, 0, 0] == 1.0


def test_decode_truncated_payload_names_offset():
    """Missing pixel bytes report the end of the buffer"""
    data = b"P5\n2 2\n255\n" + bytes([1, 2])
    with pytest.raises(ImageDecodeError) as exc:
        decode_image(data)
    assert exc.value.offset == len(data)


def test_decode_bad_header():
    """Non-numeric header tokens are rejected"""
    with pytest.raises(ImageDecodeError):
        decode_image(b"P5\nab 2\n255\n" + bytes(4))


def test_decode_unknown_signature():
    with pytest.raises(ImageDecodeError) as exc:
        decode_image(b"GIF89a")
    assert exc.value.offset == 0


def test_decode_png():
    """Gray PNG decodes through Pillow and is replicated to RGB"""
    buffer = io.BytesIO()
    Image.fromarray(np.array([[0, 255]], dtype=np.uint8)).save(buffer, format="PNG")
    img = decode_image(buffer.getvalue())
    assert img.shape == (1, 2, 3)
    np.testing.assert_array_equal(img[0, :, 0], [0.0, 1.0])
    np.testing.assert_array_equal(img[..., 0], img[..., 2])


def test_pgm_round_trip_is_exact_at_8_bits():
    """decode → encode → decode keeps 8-bit values"""
    data = b"P5\n3 2\n255\n" + bytes([0, 17, 128, 200, 254, 255])
    gray = decode_image(data)[..., 0]
    again = decode_image(encode_pgm(gray))[..., 0]
    np.testing.assert_array_equal(gray, again)


def test_grayscale_luma():
    """Rec.601 weights on pure red, white and black"""
    img = np.array([[[1.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]])
    gray = to_grayscale(img)
    assert gray[0, 0] == pytest.approx(0.299)
    assert gray[0, 1] == pytest.approx(1.0)
    assert gray[0, 2] == 0.0


def test_resize_constant_image():
    img = np.full((5, 7), 0.5)
    np.testing.assert_allclose(resize_bilinear(img, 13, 3), 0.5)


def test_resize_identity_is_copy():
    """Same dimensions return an equal but independent array"""
    img = np.random.default_rng(0).random((4, 6))
    out = resize_bilinear(img, 6, 4)
    np.testing.assert_array_equal(out, img)
    assert out is not img


def test_resize_matches_scalar_mapping():
    """2x1 → 4x1 against a per-pixel implementation of the half-pixel mapping"""
    img = np.array([[0.0, 1.0]])
    out = resize_bilinear(img, 4, 1)
    expected = []
    for i in range(4):
        src = min(max((i + 0.5) * (2 / 4) - 0.5, 0.0), 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, 1)
        expected.append(img[0, lo] * (1 - (src - lo)) + img[0, hi] * (src - lo))
    np.testing.assert_allclose(out[0], expected)
    np.testing.assert_allclose(out[0], [0.0, 0.25, 0.75, 1.0])


def test_resize_stays_within_input_range(rng):
    img = rng.random((9, 11))
    out = resize_bilinear(img, 17, 4)
    assert out.min() >= img.min()
    assert out.max() <= img.max()


def test_resize_zero_target():
    with pytest.raises(ArgumentError):
        resize_bilinear(np.zeros((3, 3)), 0, 3)


def test_masks():
    """Empty list, full cover and an interior rect"""
    img = np.ones((4, 4))
    np.testing.assert_array_equal(apply_masks(img, []), img)
    assert np.all(apply_masks(img, [MaskRect(0, 0, 4, 4)]) == 0.0)
    masked = apply_masks(img, [MaskRect(1, 1, 2, 2)])
    assert int(np.sum(masked == 0.0)) == 4
    assert np.all(masked[1:3, 1:3] == 0.0)


def test_mask_clipped_to_bounds():
    masked = apply_masks(np.ones((4, 4)), [MaskRect(-2, 3, 10, 10)])
    assert int(np.sum(masked == 0.0)) == 4
    assert np.all(masked[3] == 0.0)


def test_mask_rect_parsing():
    rect = MaskRect.parse("3,4,5,6")
    assert rect == MaskRect(3, 4, 5, 6)
    assert rect.format() == "3,4,5,6"
    with pytest.raises(ArgumentError):
        MaskRect.parse("1,2,3")
    with pytest.raises(ArgumentError):
        MaskRect(0, 0, -1, 2)
