"""
Selfie descriptor T pooled from normalized conv maps at keypoints
"""
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from .convnet import NetParams, NetSpec, forward
from .keypoints import DogConfig, Keypoint, detect_keypoints


@dataclass(frozen=True)
class LayerRatio:
    layer_index: int
    ratio: Fraction


@dataclass(frozen=True)
class SelfieDescriptor:
    data: np.ndarray
    layer_offsets: List[int]
    fallback: bool = False

    def block(self, p: int) -> np.ndarray:
        """Features of the p-th conv layer (0-based)"""
        end = self.layer_offsets[p + 1] if p + 1 < len(self.layer_offsets) else len(self.data)
        return self.data[self.layer_offsets[p]:end]


def normalize_maps(maps: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Scale each layer by its largest absolute activation; all-zero layers pass through"""
    out = []
    for layer in maps:
        peak = np.max(np.abs(layer)) if layer.size else 0.0
        out.append(layer / peak if peak > 0 else layer.copy())
    return out


def map_size_ratios(spec: NetSpec) -> List[LayerRatio]:
    """Cumulative product of 1/stride over conv and pool layers, read at every conv layer"""
    ratio = Fraction(1)
    ratios = []
    for i, layer in enumerate(spec.layers):
        if layer.kind in ("conv", "maxpool"):
            ratio /= layer.stride
        if layer.kind == "conv":
            ratios.append(LayerRatio(i, ratio))
    return ratios


def round_half_away(value: Fraction) -> int:
    if value >= 0:
        return int(value + Fraction(1, 2))
    return -round_half_away(-value)


def neighborhood_max(maps: np.ndarray) -> np.ndarray:
    """Max over each cell and its 4-connected neighbors, out-of-bounds cells skipped"""
    padded = np.pad(maps, ((0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    return np.max(np.stack([
        padded[:, 1:-1, 1:-1],
        padded[:, :-2, 1:-1],
        padded[:, 2:, 1:-1],
        padded[:, 1:-1, :-2],
        padded[:, 1:-1, 2:],
    ]), axis=0)


def map_coordinates(keypoints: Sequence[Keypoint], ratio: Fraction, rows: int, cols: int):
    """Keypoint positions on a feature map, rounded half away from zero and clamped"""
    xs = [min(max(round_half_away(ratio * Fraction(kp.x)), 0), cols - 1) for kp in keypoints]
    ys = [min(max(round_half_away(ratio * Fraction(kp.y)), 0), rows - 1) for kp in keypoints]
    return np.array(ys, dtype=np.intp), np.array(xs, dtype=np.intp)


def pool_at_keypoints(maps: np.ndarray, keypoints: Sequence[Keypoint], ratio: Fraction) -> np.ndarray:
    """
    Average over keypoints of the 4-neighborhood max at each mapped location

    Args:
        maps: Normalized activations of one conv layer, shape (N, H, W)
        keypoints: Non-empty keypoint list in input-image coordinates
        ratio: Map size ratio of the layer

    Returns:
        Vector of length N
    """
    _, rows, cols = maps.shape
    ys, xs = map_coordinates(keypoints, ratio, rows, cols)
    pooled = neighborhood_max(maps)[:, ys, xs]
    return pooled.mean(axis=1)


def build_descriptor(spec: NetSpec, params: NetParams, img: np.ndarray, cfg: DogConfig = DogConfig(),
                     keypoints: Optional[Sequence[Keypoint]] = None) -> SelfieDescriptor:
    """
    Selfie descriptor of one canonical grayscale image

    Args:
        spec: Network structure
        params: Trained weights
        img: Grayscale image matching the network input size
        cfg: Keypoint detector settings
        keypoints: Precomputed keypoints; detected from ``img`` when omitted

    Returns:
        SelfieDescriptor concatenating one block per conv layer
    """
    fallback = False
    if keypoints is None:
        detection = detect_keypoints(img, cfg)
        keypoints, fallback = detection.keypoints, detection.fallback
    _, cache = forward(spec, params, img[None])
    normalized = normalize_maps(cache.conv_maps(0))
    blocks, offsets, start = [], [], 0
    for maps, layer_ratio in zip(normalized, map_size_ratios(spec)):
        offsets.append(start)
        block = pool_at_keypoints(maps, keypoints, layer_ratio.ratio)
        blocks.append(block)
        start += len(block)
    return SelfieDescriptor(np.concatenate(blocks), offsets, fallback)
