"""
Raster image utilities: decoding, grayscale conversion, resizing and masking
"""
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ArgumentError, ImageDecodeError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
_WHITESPACE = b" \t\r\n\x0b\x0c"


@dataclass(frozen=True)
class MaskRect:
    """Axis-aligned rectangle in pixel coordinates"""
    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ArgumentError(f"mask rect has negative extent: {self}")

    @classmethod
    def parse(cls, text: str) -> "MaskRect":
        """Parse an ``x0,y0,w,h`` string"""
        parts = text.strip().split(",")
        if len(parts) != 4:
            raise ArgumentError(f"mask rect must have 4 fields, got '{text}'")
        try:
            x0, y0, w, h = (int(p) for p in parts)
        except ValueError:
            raise ArgumentError(f"mask rect fields must be integers, got '{text}'")
        return cls(x0, y0, w, h)

    def format(self) -> str:
        return f"{self.x0},{self.y0},{self.w},{self.h}"


def _read_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    """Read one whitespace-delimited PNM header token, skipping comments"""
    n = len(data)
    while pos < n:
        if data[pos] in _WHITESPACE:
            pos += 1
        elif data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageDecodeError("truncated PNM header", pos)
    return data[start:pos], pos


def _decode_pnm(data: bytes) -> np.ndarray:
    magic = data[:2]
    channels = 1 if magic == b"P5" else 3
    pos = 2
    fields = []
    for _ in range(3):
        token_start = pos
        token, pos = _read_token(data, pos)
        if not token.isdigit():
            raise ImageDecodeError(f"invalid PNM header token {token!r}", token_start)
        fields.append(int(token))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageDecodeError("PNM dimensions must be positive", 2)
    if not 1 <= maxval <= 65535:
        raise ImageDecodeError(f"PNM maxval {maxval} out of range", pos)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise ImageDecodeError("missing whitespace after PNM header", pos)
    pos += 1

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * channels * dtype.itemsize
    if len(data) - pos < expected:
        raise ImageDecodeError(
            f"truncated PNM payload: need {expected} bytes, have {len(data) - pos}",
            len(data),
        )
    raw = np.frombuffer(data, dtype=dtype, count=width * height * channels, offset=pos)
    pixels = raw.astype(np.float64).reshape(height, width, channels) / maxval
    if channels == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    return np.clip(pixels, 0.0, 1.0)


def _decode_png(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as image:
            image.load()
            if image.mode in ("I;16", "I;16B", "I"):
                values = np.asarray(image, dtype=np.float64) / 65535.0
                rgb = np.repeat(values[:, :, None], 3, axis=2)
            else:
                rgb = np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ImageDecodeError(f"malformed PNG: {e}", len(PNG_SIGNATURE))
    return np.clip(rgb, 0.0, 1.0)


def decode_image(data: bytes) -> np.ndarray:
    """
    Decode a PNG or binary PPM/PGM file into an RGB image

    Args:
        data: Encoded file contents

    Returns:
        Array of shape (height, width, 3) with intensities in [0, 1]
    """
    if data[:2] in (b"P5", b"P6"):
        return _decode_pnm(data)
    if data[:len(PNG_SIGNATURE)] == PNG_SIGNATURE:
        return _decode_png(data)
    raise ImageDecodeError("unrecognized image signature", 0)


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Read and decode an image file from disk"""
    return decode_image(Path(path).read_bytes())


def _quantize(values: np.ndarray) -> np.ndarray:
    if values.dtype == np.uint8:
        return values
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_pgm(img: np.ndarray) -> bytes:
    """Encode a grayscale image as binary PGM (P5, maxval 255)"""
    height, width = img.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + _quantize(img).tobytes()


def encode_ppm(img: np.ndarray) -> bytes:
    """Encode an RGB image as binary PPM (P6, maxval 255)"""
    height, width, _ = img.shape
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + _quantize(img).tobytes()


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Convert an RGB image to Rec.601 luma"""
    gray = img @ LUMA_WEIGHTS
    return np.clip(gray, 0.0, 1.0)


def _bilinear_axis(in_size: int, out_size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = in_size / out_size
    src = (np.arange(out_size) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, src - lo


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """
    Resize a grayscale image with half-pixel-centered bilinear interpolation

    Args:
        img: Grayscale image of shape (height, width)
        out_w: Target width in pixels
        out_h: Target height in pixels

    Returns:
        Resized image of shape (out_h, out_w)
    """
    if out_w < 1 or out_h < 1:
        raise ArgumentError(f"resize target must be at least 1x1, got {out_w}x{out_h}")
    in_h, in_w = img.shape
    if (in_w, in_h) == (out_w, out_h):
        return img.copy()

    x_lo, x_hi, fx = _bilinear_axis(in_w, out_w)
    y_lo, y_hi, fy = _bilinear_axis(in_h, out_h)
    top = img[y_lo][:, x_lo] * (1.0 - fx) + img[y_lo][:, x_hi] * fx
    bottom = img[y_hi][:, x_lo] * (1.0 - fx) + img[y_hi][:, x_hi] * fx
    out = top * (1.0 - fy)[:, None] + bottom * fy[:, None]
    # keep the convex-combination bound exact under rounding
    return np.clip(out, img.min(), img.max())


def apply_masks(img: np.ndarray, rects: Iterable[MaskRect]) -> np.ndarray:
    """Zero every pixel covered by any rectangle, clipped to image bounds"""
    out = img.copy()
    height, width = img.shape[:2]
    for rect in rects:
        x0, y0 = max(rect.x0, 0), max(rect.y0, 0)
        x1, y1 = min(rect.x0 + rect.w, width), min(rect.y0 + rect.h, height)
        if x1 > x0 and y1 > y0:
            out[y0:y1, x0:x1] = 0.0
    return out


def load_gray(path: Union[str, Path], size: int) -> np.ndarray:
    """Read an image and bring it to the canonical square grayscale input"""
    gray = to_grayscale(read_image(path))
    return resize_bilinear(gray, size, size)


def prepare_image(path: Union[str, Path], size: int, rects: List[MaskRect] = ()) -> np.ndarray:
    """Load the canonical grayscale input and apply masks in resized coordinates"""
    return apply_masks(load_gray(path, size), rects)
