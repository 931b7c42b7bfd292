"""
Hierarchical HOG and LBP descriptors for head and shoulder orientation
"""
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from .errors import ArgumentError

# (row, col) neighbor offsets in MSB-first order, scaled by the radius
LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


class FeatureKind(str, Enum):
    HOG = "hog"
    LBP = "lbp"
    SYNERGY = "synergy"
    DESCRIPTOR = "descriptor"


@dataclass(frozen=True)
class FeatureVector:
    data: np.ndarray
    kind: FeatureKind

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class HogConfig:
    """
    Hierarchical HOG settings

    With ``pyramid`` set, levels 1..levels are concatenated; otherwise only
    the 2^levels x 2^levels partition is used.
    """
    levels: int = 4
    bins: int = 9
    pyramid: bool = True

    def __post_init__(self):
        if self.levels < 1 or self.bins < 1:
            raise ArgumentError(f"HOG levels and bins must be >= 1: {self}")

    @property
    def level_range(self) -> range:
        return range(1, self.levels + 1) if self.pyramid else range(self.levels, self.levels + 1)

    @property
    def length(self) -> int:
        return sum(4 ** level * self.bins for level in self.level_range)


@dataclass(frozen=True)
class LbpConfig:
    grid: int = 8
    radius: int = 1

    def __post_init__(self):
        if self.grid < 1 or self.radius < 1:
            raise ArgumentError(f"LBP grid and radius must be >= 1: {self}")

    @property
    def length(self) -> int:
        return self.grid * self.grid * UNIFORM_BIN_COUNT


def block_edges(size: int, parts: int) -> np.ndarray:
    """Even integer partition of ``size`` pixels into ``parts`` spans"""
    return (np.arange(parts + 1) * size) // parts


def _block_index(size: int, parts: int) -> np.ndarray:
    """Block number of every pixel coordinate along one axis"""
    edges = block_edges(size, parts)
    return np.searchsorted(edges, np.arange(size), side="right") - 1


def gradient_field(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Central-difference gradients with replicate-clamped borders

    Args:
        img: Grayscale image of shape (height, width), both at least 3

    Returns:
        Tuple of (magnitude, orientation in degrees within [0, 180))
    """
    if img.ndim != 2 or min(img.shape) < 3:
        raise ArgumentError(f"gradient_field needs an image of at least 3x3, got {img.shape}")
    padded = np.pad(img, 1, mode="edge")
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    magnitude = np.sqrt(gx * gx + gy * gy)
    orientation = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    orientation[orientation >= 180.0] = 0.0
    return magnitude, orientation


def orientation_bins(orientation: np.ndarray, bins: int) -> np.ndarray:
    """Nearest-center hard assignment of unsigned orientations"""
    index = np.floor(orientation * (bins / 180.0)).astype(np.intp)
    return np.clip(index, 0, bins - 1)


def hog_hierarchical(img: np.ndarray, cfg: HogConfig = HogConfig()) -> FeatureVector:
    """
    Pyramid HOG descriptor γ

    Each level l partitions the image into a 2^l x 2^l grid and votes every
    pixel's gradient magnitude into its orientation bin. Histograms are
    concatenated level-major, row-major, bin-minor.
    """
    magnitude, orientation = gradient_field(img)
    height, width = img.shape
    bin_index = orientation_bins(orientation, cfg.bins).ravel()
    weights = magnitude.ravel()

    parts = []
    for level in cfg.level_range:
        grid = 2 ** level
        rows = _block_index(height, grid)
        cols = _block_index(width, grid)
        block = (rows[:, None] * grid + cols[None, :]).ravel()
        hist = np.bincount(block * cfg.bins + bin_index, weights=weights,
                           minlength=grid * grid * cfg.bins)
        parts.append(hist)
    return FeatureVector(np.concatenate(parts), FeatureKind.HOG)


def lbp_code(img: np.ndarray, x: int, y: int, radius: int = 1) -> int:
    """8-bit LBP code of one pixel; neighbors >= center set their bit"""
    height, width = img.shape
    if not (radius <= x < width - radius and radius <= y < height - radius):
        raise ArgumentError(f"pixel ({x}, {y}) is within {radius} px of the border")
    center = img[y, x]
    code = 0
    for dr, dc in LBP_OFFSETS:
        code = (code << 1) | int(img[y + dr * radius, x + dc * radius] >= center)
    return code


def lbp_codes(img: np.ndarray, radius: int = 1) -> np.ndarray:
    """LBP codes of every pixel at least ``radius`` from the border"""
    height, width = img.shape
    r = radius
    if height <= 2 * r or width <= 2 * r:
        return np.zeros((0, 0), dtype=np.intp)
    center = img[r:height - r, r:width - r]
    codes = np.zeros(center.shape, dtype=np.intp)
    for dr, dc in LBP_OFFSETS:
        neighbor = img[r + dr * r:height - r + dr * r, r + dc * r:width - r + dc * r]
        codes = (codes << 1) | (neighbor >= center)
    return codes


def is_uniform(code: int) -> bool:
    """True iff the circular 8-bit pattern has at most two 0/1 transitions"""
    rotated = ((code << 1) | (code >> 7)) & 0xFF
    return bin(code ^ rotated).count("1") <= 2


def _uniform_table() -> np.ndarray:
    table = np.full(256, -1, dtype=np.intp)
    uniform = [code for code in range(256) if is_uniform(code)]
    table[uniform] = np.arange(len(uniform))
    table[table < 0] = len(uniform)
    return table


UNIFORM_LOOKUP = _uniform_table()
UNIFORM_BIN_COUNT = int(UNIFORM_LOOKUP.max()) + 1


def lbp_hierarchical(img: np.ndarray, cfg: LbpConfig = LbpConfig()) -> FeatureVector:
    """
    Block LBP descriptor τ

    The image is split into grid x grid blocks; every pixel at least
    ``radius`` from the image border votes its uniform-pattern bin (58
    uniform codes in ascending order, then one catch-all bin).
    """
    height, width = img.shape
    r = cfg.radius
    bins = UNIFORM_BIN_COUNT
    hist = np.zeros(cfg.grid * cfg.grid * bins)
    codes = lbp_codes(img, r)
    if codes.size:
        rows = _block_index(height, cfg.grid)[r:height - r]
        cols = _block_index(width, cfg.grid)[r:width - r]
        block = (rows[:, None] * cfg.grid + cols[None, :]).ravel()
        index = block * bins + UNIFORM_LOOKUP[codes.ravel()]
        hist = np.bincount(index, minlength=hist.size).astype(np.float64)
    return FeatureVector(hist, FeatureKind.LBP)


def handcrafted_pair(img: np.ndarray, hog_cfg: HogConfig, lbp_cfg: LbpConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Both head/shoulder descriptors for one canonical image"""
    return hog_hierarchical(img, hog_cfg).data, lbp_hierarchical(img, lbp_cfg).data
