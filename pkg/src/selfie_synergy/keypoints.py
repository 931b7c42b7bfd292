"""
Difference-of-Gaussians keypoint detection (locations only)
"""
import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np
from scipy import ndimage

from .errors import ArgumentError

MIN_OCTAVE_SIZE = 16
FALLBACK_GRID = 4


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    octave: int
    scale_index: int
    response: float


@dataclass(frozen=True)
class DogConfig:
    """
    Scale-space detector settings

    ``max_octaves`` of 0 keeps halving until the smaller side drops below 16.
    """
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_thresh: float = 0.03
    edge_ratio: float = 10.0
    max_octaves: int = 0

    def __post_init__(self):
        if self.scales_per_octave < 1:
            raise ArgumentError(f"scales_per_octave must be >= 1, got {self.scales_per_octave}")
        if self.base_sigma <= 0 or self.contrast_thresh <= 0 or self.edge_ratio <= 0:
            raise ArgumentError(f"DoG thresholds must be positive: {self}")


@dataclass(frozen=True)
class Detection:
    keypoints: List[Keypoint]
    fallback: bool = False


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled 1-D Gaussian of radius ceil(3σ), normalized to sum 1"""
    if sigma <= 0:
        raise ArgumentError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicated borders"""
    kernel = gaussian_kernel(sigma)
    out = ndimage.correlate1d(np.asarray(img, dtype=np.float64), kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(out, kernel, axis=1, mode="nearest")


def _octave_stack(base: np.ndarray, cfg: DogConfig) -> List[np.ndarray]:
    """s + 3 progressively blurred images with σ_i = base_sigma·2^(i/s)"""
    s = cfg.scales_per_octave
    images = [base]
    for i in range(1, s + 3):
        prev = cfg.base_sigma * 2 ** ((i - 1) / s)
        cur = cfg.base_sigma * 2 ** (i / s)
        images.append(gaussian_blur(images[-1], math.sqrt(cur * cur - prev * prev)))
    return images


def _strict_extrema(dog: np.ndarray) -> np.ndarray:
    """Mask of (scale, row, col) cells strictly above or below all 26 neighbors"""
    center = dog[1:-1, 1:-1, 1:-1]
    is_max = np.ones(center.shape, dtype=bool)
    is_min = np.ones(center.shape, dtype=bool)
    depth, rows, cols = dog.shape
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dz == dy == dx == 0:
                    continue
                neighbor = dog[1 + dz:depth - 1 + dz, 1 + dy:rows - 1 + dy, 1 + dx:cols - 1 + dx]
                is_max &= center > neighbor
                is_min &= center < neighbor
    mask = np.zeros(dog.shape, dtype=bool)
    mask[1:-1, 1:-1, 1:-1] = is_max | is_min
    return mask


def _passes_edge_test(d: np.ndarray, y: int, x: int, ratio: float) -> bool:
    dxx = d[y, x + 1] + d[y, x - 1] - 2.0 * d[y, x]
    dyy = d[y + 1, x] + d[y - 1, x] - 2.0 * d[y, x]
    dxy = (d[y + 1, x + 1] - d[y + 1, x - 1] - d[y - 1, x + 1] + d[y - 1, x - 1]) / 4.0
    trace, det = dxx + dyy, dxx * dyy - dxy * dxy
    if det <= 0:
        return False
    return trace * trace / det <= (ratio + 1.0) ** 2 / ratio


def fallback_grid(width: int, height: int) -> List[Keypoint]:
    """Uniform 4x4 grid of cell centers"""
    return [
        Keypoint(x=int((2 * i + 1) * width // (2 * FALLBACK_GRID)),
                 y=int((2 * j + 1) * height // (2 * FALLBACK_GRID)),
                 octave=-1, scale_index=-1, response=0.0)
        for j in range(FALLBACK_GRID) for i in range(FALLBACK_GRID)
    ]


def detect_keypoints(img: np.ndarray, cfg: DogConfig = DogConfig()) -> Detection:
    """
    Scale-space extrema of the difference-of-Gaussians pyramid

    Args:
        img: Grayscale image with both sides at least 16
        cfg: Detector settings

    Returns:
        Detection with keypoints in input-image pixel coordinates; when no
        extremum survives the filters, a flagged 4x4 fallback grid
    """
    height, width = img.shape
    if min(height, width) < MIN_OCTAVE_SIZE:
        raise ArgumentError(f"image must be at least {MIN_OCTAVE_SIZE}x{MIN_OCTAVE_SIZE}, got {img.shape}")
    s = cfg.scales_per_octave
    base = gaussian_blur(img, cfg.base_sigma)
    found: List[Keypoint] = []
    seen = set()
    octave = 0
    while min(base.shape) >= MIN_OCTAVE_SIZE and (cfg.max_octaves <= 0 or octave < cfg.max_octaves):
        gauss = _octave_stack(base, cfg)
        dog = np.stack([b - a for a, b in zip(gauss[:-1], gauss[1:])])
        # only interior scales 1..s can be marked
        candidates = _strict_extrema(dog) & (np.abs(dog) >= cfg.contrast_thresh)
        for z, y, x in zip(*np.nonzero(candidates)):
            if not _passes_edge_test(dog[z], y, x, cfg.edge_ratio):
                continue
            key = (int(x) << octave, int(y) << octave)
            if key in seen:
                continue
            seen.add(key)
            found.append(Keypoint(x=key[0], y=key[1], octave=octave,
                                  scale_index=int(z), response=float(dog[z, y, x])))
        base = gauss[s][::2, ::2]
        octave += 1
    if not found:
        return Detection(fallback_grid(width, height), fallback=True)
    return Detection(found)


def keypoints_to_csv(keypoints: List[Keypoint], path: Union[str, Path]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "octave", "scale_index", "response"])
        for kp in keypoints:
            writer.writerow([kp.x, kp.y, kp.octave, kp.scale_index, repr(kp.response)])
