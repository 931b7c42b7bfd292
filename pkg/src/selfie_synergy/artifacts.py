"""
Versioned binary artifact format and the content-addressed stage store

File layout (little-endian):
    magic "SYNG" | u16 version | u16 type tag | u32 metadata length | metadata (UTF-8 JSON)
    u32 array count | per array: u16 name length, name, u16 ndim, u64 dims..., float64 payload
"""
import hashlib
import json
import struct
import time
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import click
import numpy as np

from .errors import ArtifactFormatError, MissingArtifactError

MAGIC = b"SYNG"
VERSION = 1


class ArtifactType(IntEnum):
    FEATURE_BANK = 1
    SYNERGY_MODEL = 2
    NET_PARAMS = 3
    DESCRIPTORS = 4
    SVM_MODEL = 5


@dataclass
class Artifact:
    type: ArtifactType
    arrays: Dict[str, np.ndarray]
    meta: Dict[str, Any]


def encode_artifact(artifact: Artifact) -> bytes:
    meta = json.dumps(artifact.meta, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<HHI", VERSION, int(artifact.type), len(meta)), meta,
              struct.pack("<I", len(artifact.arrays))]
    for name in sorted(artifact.arrays):
        array = np.asarray(artifact.arrays[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<H", array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
    return b"".join(chunks)


def decode_artifact(data: bytes) -> Artifact:
    def take(fmt: str, pos: int) -> Tuple[tuple, int]:
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ArtifactFormatError(f"truncated artifact at byte {pos}")
        return struct.unpack_from(fmt, data, pos), pos + size

    if data[:4] != MAGIC:
        raise ArtifactFormatError("missing SYNG magic")
    (version, type_tag, meta_len), pos = take("<HHI", 4)
    if version != VERSION:
        raise ArtifactFormatError(f"unsupported artifact version {version}")
    try:
        art_type = ArtifactType(type_tag)
        meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise ArtifactFormatError(f"bad artifact header: {e}")
    pos += meta_len
    (count,), pos = take("<I", pos)
    arrays = {}
    for _ in range(count):
        (name_len,), pos = take("<H", pos)
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,), pos = take("<H", pos)
        shape, pos = take(f"<{ndim}Q", pos)
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if pos + nbytes > len(data):
            raise ArtifactFormatError(f"truncated payload for array '{name}'")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).copy()
        pos += nbytes
    return Artifact(art_type, arrays, meta)


def save_artifact(artifact: Artifact, path: Union[str, Path]):
    Path(path).write_bytes(encode_artifact(artifact))


def load_artifact(path: Union[str, Path]) -> Artifact:
    return decode_artifact(Path(path).read_bytes())


def stable_hash(payload: Any) -> str:
    """SHA-256 of the canonical JSON form of ``payload``"""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def file_hash(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class ArtifactStore:
    """
    Stage outputs under ``<root>/<stage>/<key>/``

    The key hashes the stage's configuration slice together with the keys
    of its upstream stages, so any upstream change yields a new key.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def stage_dir(self, stage: str, key: str) -> Path:
        return self.root / stage / key[:16]

    def has(self, stage: str, key: str) -> bool:
        return (self.stage_dir(stage, key) / "provenance.json").exists()

    def require(self, stage: str, key: str, needed_by: str) -> Path:
        if not self.has(stage, key):
            raise MissingArtifactError(stage, needed_by)
        return self.stage_dir(stage, key)

    def begin(self, stage: str, key: str) -> Path:
        directory = self.stage_dir(stage, key)
        directory.mkdir(parents=True, exist_ok=True)
        return directory

    def commit(self, stage: str, key: str, config_hash: str, inputs: Dict[str, str],
               started: float, extra: Optional[Dict[str, Any]] = None):
        """Write the provenance record that marks a stage directory complete"""
        record = {
            "stage": stage,
            "key": key,
            "config_hash": config_hash,
            "inputs": inputs,
            "wall_time_s": round(time.time() - started, 3),
        }
        record.update(extra or {})
        path = self.stage_dir(stage, key) / "provenance.json"
        path.write_text(json.dumps(record, indent=2, sort_keys=True))
        click.echo(f"✓ {stage} written to {path.parent} ({record['wall_time_s']}s)")

    def provenance(self, stage: str, key: str) -> Dict[str, Any]:
        return json.loads((self.stage_dir(stage, key) / "provenance.json").read_text())
