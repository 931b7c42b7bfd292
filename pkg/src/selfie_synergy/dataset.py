"""
Dataset manifests, stratified splits and the synthetic selfie generator
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import click
import numpy as np

from .errors import ArgumentError, ManifestError
from .imaging import MaskRect, encode_pgm

LABELS = ("selfie", "non_selfie")
SPLIT_TAGS = ("train", "val", "test")
MIN_PER_CLASS = 10


@dataclass(frozen=True)
class ManifestRecord:
    path: Path
    label: str
    rects: Tuple[MaskRect, ...] = ()
    has_rects: bool = False
    image_id: str = ""

    @property
    def y(self) -> int:
        """+1 for selfie, -1 otherwise"""
        return 1 if self.label == "selfie" else -1


@dataclass
class DatasetManifest:
    records: List[ManifestRecord]
    source: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.y for r in self.records])

    @property
    def ids(self) -> List[str]:
        return [r.image_id for r in self.records]

    def by_id(self) -> Dict[str, int]:
        return {r.image_id: i for i, r in enumerate(self.records)}

    def by_path(self) -> Dict[Path, int]:
        """Record index by resolved image path"""
        return {r.path.resolve(): i for i, r in enumerate(self.records)}

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DatasetManifest":
        """
        Parse a manifest of ``path<TAB>label[<TAB>rects]`` lines

        ``rects`` is ``x0,y0,w,h;...``; ``-`` or an empty field means no
        rectangles, while a missing column means rectangles are unknown.
        Relative image paths resolve against the manifest's directory.
        """
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"manifest not found: {path}")
        base = path.parent
        records: List[ManifestRecord] = []
        seen = set()
        for number, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise ManifestError(f"expected 2 or 3 tab-separated fields, got {len(fields)}", number)
            image, label = fields[0].strip(), fields[1].strip()
            if label not in LABELS:
                raise ManifestError(f"unknown label '{label}' (expected one of {LABELS})", number)
            if image in seen:
                raise ManifestError(f"duplicate path '{image}'", number)
            seen.add(image)
            rects: Tuple[MaskRect, ...] = ()
            if len(fields) == 3 and fields[2].strip() not in ("", "-"):
                try:
                    rects = tuple(MaskRect.parse(r) for r in fields[2].split(";") if r.strip())
                except ArgumentError as e:
                    raise ManifestError(str(e), number)
            image_id = Path(image).with_suffix("").as_posix().replace("/", "_")
            records.append(ManifestRecord(base / image, label, rects, len(fields) == 3, image_id))
        ids = [r.image_id for r in records]
        if len(set(ids)) != len(ids):
            raise ManifestError("image ids derived from paths are not unique")
        return cls(records, path)

    def dump(self, path: Union[str, Path]):
        """Write the manifest with paths relative to its new location where possible"""
        path = Path(path)
        lines = []
        for record in self.records:
            try:
                image = record.path.relative_to(path.parent).as_posix()
            except ValueError:
                image = record.path.as_posix()
            line = f"{image}\t{record.label}"
            if record.has_rects:
                line += "\t" + (";".join(r.format() for r in record.rects) or "-")
            lines.append(line)
        path.write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SplitAssignment:
    tags: List[str]
    seed: int

    def indices(self, tag: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.tags) if t == tag], dtype=np.intp)

    def counts(self) -> Dict[str, int]:
        return {tag: self.tags.count(tag) for tag in SPLIT_TAGS}

    def to_tsv(self, manifest: DatasetManifest) -> str:
        return "".join(f"{r.image_id}\t{t}\n" for r, t in zip(manifest.records, self.tags))


def split_dataset(manifest: DatasetManifest, seed: int = 0) -> SplitAssignment:
    """
    Stratified 60/10/30 split

    Per class: floor(60%) train, floor(10%) val, the remainder test.
    """
    rng = np.random.default_rng(seed)
    tags = [""] * len(manifest)
    for label in LABELS:
        members = [i for i, r in enumerate(manifest.records) if r.label == label]
        n = len(members)
        if n < MIN_PER_CLASS:
            raise ArgumentError(f"class '{label}' has {n} records; at least {MIN_PER_CLASS} are needed")
        n_train, n_val = n * 6 // 10, n // 10
        for rank, pos in enumerate(rng.permutation(n)):
            tag = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            tags[members[pos]] = tag
    return SplitAssignment(tags, seed)


@dataclass(frozen=True)
class SceneParams:
    """Ground truth of one synthetic image (angles in degrees)"""
    head_angle: float
    bar_angle: float
    selfie: bool

    @property
    def misalignment(self) -> float:
        """Unsigned orientation difference folded to [0, 90]"""
        diff = (self.bar_angle - self.head_angle) % 180.0
        return min(diff, 180.0 - diff)


@dataclass
class SceneStyle:
    background: float = 0.25
    head: float = 0.85
    bar: float = 0.65
    noise: float = 0.05
    angle_noise: float = 5.0
    max_head_angle: float = 35.0
    min_misalignment: float = 25.0
    distractors: int = 2


def _bounding_rect(x0: float, y0: float, x1: float, y1: float, size: int) -> MaskRect:
    left, top = max(int(math.floor(x0)), 0), max(int(math.floor(y0)), 0)
    right, bottom = min(int(math.ceil(x1)) + 1, size), min(int(math.ceil(y1)) + 1, size)
    return MaskRect(left, top, max(right - left, 0), max(bottom - top, 0))


def render_scene(rng: np.random.Generator, size: int, selfie: bool,
                 style: SceneStyle = SceneStyle()) -> Tuple[np.ndarray, List[MaskRect], SceneParams]:
    """
    Draw a head disk above an oriented shoulder bar

    For selfies the bar runs perpendicular to the head's offset direction
    (up to Gaussian angle noise); otherwise it is rotated away from that
    orientation by at least ``min_misalignment`` degrees.

    Returns:
        Tuple of (image, [head rect, bar rect], SceneParams)
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((size, size), style.background)

    cx = size / 2 + rng.uniform(-size / 16, size / 16)
    cy = 0.62 * size + rng.uniform(-size / 16, size / 16)
    head_angle = rng.uniform(-style.max_head_angle, style.max_head_angle)
    if selfie:
        bar_angle = head_angle + rng.normal(0.0, style.angle_noise)
    else:
        bar_angle = head_angle + rng.choice((-1.0, 1.0)) * rng.uniform(style.min_misalignment, 90.0)

    for _ in range(style.distractors):
        dx, dy = rng.uniform(0, size), rng.uniform(0, size)
        extent = rng.uniform(size / 12, size / 8)
        level = style.background + rng.uniform(0.05, 0.12)
        if rng.random() < 0.5:
            img[(xx - dx) ** 2 + (yy - dy) ** 2 <= (extent / 2) ** 2] = level
        else:
            img[(np.abs(xx - dx) <= extent / 2) & (np.abs(yy - dy) <= extent / 3)] = level

    length, thickness = 0.55 * size, 0.07 * size
    beta = math.radians(bar_angle)
    u = (xx - cx) * math.cos(beta) + (yy - cy) * math.sin(beta)
    v = -(xx - cx) * math.sin(beta) + (yy - cy) * math.cos(beta)
    img[(np.abs(u) <= length / 2) & (np.abs(v) <= thickness / 2)] = style.bar
    half_w = abs(length / 2 * math.cos(beta)) + abs(thickness / 2 * math.sin(beta))
    half_h = abs(length / 2 * math.sin(beta)) + abs(thickness / 2 * math.cos(beta))
    bar_rect = _bounding_rect(cx - half_w, cy - half_h, cx + half_w, cy + half_h, size)

    radius, distance = size / 10, 0.22 * size
    phi = math.radians(head_angle)
    hx, hy = cx + distance * math.sin(phi), cy - distance * math.cos(phi)
    img[(xx - hx) ** 2 + (yy - hy) ** 2 <= radius ** 2] = style.head
    head_rect = _bounding_rect(hx - radius, hy - radius, hx + radius, hy + radius, size)

    img = np.clip(img + rng.normal(0.0, style.noise, img.shape), 0.0, 1.0)
    return img, [head_rect, bar_rect], SceneParams(float(head_angle), float(bar_angle), selfie)


def corner_rects(size: int) -> List[MaskRect]:
    """Four corner squares of side size/8, away from the synthetic subject"""
    side = max(size // 8, 1)
    far = size - side
    return [MaskRect(0, 0, side, side), MaskRect(far, 0, side, side),
            MaskRect(0, far, side, side), MaskRect(far, far, side, side)]


def generate_synthetic_dataset(n_per_class: int, seed: int, out_dir: Union[str, Path],
                               size: int = 227, style: SceneStyle = SceneStyle()) -> DatasetManifest:
    """
    Write a balanced synthetic dataset

    Creates ``images/*.pgm``, ``manifest.tsv`` (head and bar rects),
    ``manifest_corners.tsv`` (corner rects) and ``scenes.tsv`` (ground-truth
    angles) under ``out_dir``.

    Returns:
        The manifest written to ``manifest.tsv``
    """
    if n_per_class < MIN_PER_CLASS:
        raise ArgumentError(f"n_per_class must be at least {MIN_PER_CLASS}, got {n_per_class}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    click.echo(f"🔄 Generating {2 * n_per_class} synthetic images in {out_dir}...")

    records, corner_records, scenes = [], [], []
    corners = tuple(corner_rects(size))
    for i in range(n_per_class):
        for label in LABELS:
            img, rects, params = render_scene(rng, size, label == "selfie", style)
            name = f"images/{label}_{i:05d}.pgm"
            (out_dir / name).write_bytes(encode_pgm(img))
            image_id = name[:-4].replace("/", "_")
            records.append(ManifestRecord(out_dir / name, label, tuple(rects), True, image_id))
            corner_records.append(ManifestRecord(out_dir / name, label, corners, True, image_id))
            scenes.append(f"{image_id}\t{label}\t{params.head_angle!r}\t{params.bar_angle!r}\n")

    manifest = DatasetManifest(records, out_dir / "manifest.tsv")
    manifest.dump(out_dir / "manifest.tsv")
    DatasetManifest(corner_records).dump(out_dir / "manifest_corners.tsv")
    (out_dir / "scenes.tsv").write_text("id\tlabel\thead_angle\tbar_angle\n" + "".join(scenes))
    click.echo(f"✓ Wrote {len(records)} images and manifests")
    return manifest


def read_scenes(path: Union[str, Path]) -> List[SceneParams]:
    rows = Path(path).read_text().splitlines()[1:]
    out = []
    for row in rows:
        _, label, head, bar = row.split("\t")
        out.append(SceneParams(float(head), float(bar), label == "selfie"))
    return out


def stack_images(images: Sequence[np.ndarray]) -> np.ndarray:
    """(n, 1, H, W) network input batch"""
    return np.stack(images)[:, None, :, :]
