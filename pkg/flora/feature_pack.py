"""
Feature Pack (FPACK) container
==============================

Binary layout, little-endian throughout:

    magic    8 bytes  b"FLORAFPK"
    version  u32      1
    kind     u32      0 skeleton, 1 semantic
    n_items  u32
    M        u32      tokens per item (1 for raw skeleton features)
    d        u32
    labels   n_items × u32
    payload  n_items·M·d × IEEE-754 binary32

Class names are metadata only and are not part of the binary format.
"""

import logging
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from flora.errors import (
    BadKindError,
    BadMagicError,
    InvalidPackError,
    NonFinitePayloadError,
    TrailingBytesError,
    TruncatedPayloadError,
    VersionMismatchError,
)

logger = logging.getLogger("flora.data")

MAGIC = b"FLORAFPK"
VERSION = 1
HEADER = struct.Struct("<8sIIIII")


class PackKind(IntEnum):
    SKELETON = 0
    SEMANTIC = 1


@dataclass
class FeaturePack:
    """
    Labeled token-structured features, (n_items, M, d)

    Features stay float64 when built from float64 arrays (attuned packs);
    everything else is held as float32, the on-disk width.
    """
    kind: PackKind
    features: np.ndarray
    labels: np.ndarray
    class_names: Optional[List[str]] = None

    def __post_init__(self):
        self.kind = PackKind(self.kind)
        features = np.asarray(self.features)
        dtype = np.float64 if features.dtype == np.float64 else np.float32
        self.features = np.ascontiguousarray(features, dtype=dtype)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint32)

    @property
    def n_items(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_tokens(self) -> int:
        return int(self.features.shape[1])

    @property
    def dim(self) -> int:
        return int(self.features.shape[2])

    def validate(self) -> "FeaturePack":
        if self.features.ndim != 3:
            raise InvalidPackError(f"features must be (n_items, M, d), got shape {self.features.shape}")
        if self.labels.shape != (self.n_items,):
            raise InvalidPackError(f"{self.labels.shape[0]} labels for {self.n_items} items")
        if not np.all(np.isfinite(self.features)):
            raise NonFinitePayloadError("features contain NaN or Inf")
        if self.kind is PackKind.SEMANTIC and not np.array_equal(self.labels, np.arange(self.n_items)):
            raise InvalidPackError("semantic pack labels must be the identity sequence")
        return self

    def subset(self, indices) -> "FeaturePack":
        indices = np.asarray(indices, dtype=np.int64)
        return FeaturePack(self.kind, self.features[indices], self.labels[indices], self.class_names)

    def same_content(self, other: "FeaturePack") -> bool:
        return (
            self.kind == other.kind
            and self.features.dtype == other.features.dtype
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and self.labels.tobytes() == other.labels.tobytes()
        )


def encode_fpack(pack: FeaturePack) -> bytes:
    pack.validate()
    header = HEADER.pack(MAGIC, VERSION, int(pack.kind), pack.n_items, pack.n_tokens, pack.dim)
    labels = pack.labels.astype("<u4").tobytes()
    payload = pack.features.astype("<f4").tobytes()
    return header + labels + payload


def decode_fpack(blob: bytes) -> FeaturePack:
    """
    Parse FPACK bytes

    Raises:
        BadMagicError, VersionMismatchError, BadKindError,
        TruncatedPayloadError, TrailingBytesError, NonFinitePayloadError,
        InvalidPackError
    """
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, got {bytes(blob[:len(MAGIC)])!r}")
    if len(blob) < HEADER.size:
        raise TruncatedPayloadError(f"header needs {HEADER.size} bytes, file has {len(blob)}")

    _, version, kind, n_items, n_tokens, dim = HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise VersionMismatchError(f"FPACK version {version}, reader supports {VERSION}")
    if kind not in (PackKind.SKELETON, PackKind.SEMANTIC):
        raise BadKindError(f"unknown pack kind {kind}")

    expected = HEADER.size + 4 * n_items + 4 * n_items * n_tokens * dim
    if len(blob) < expected:
        raise TruncatedPayloadError(f"extents need {expected} bytes, file has {len(blob)}")
    if len(blob) > expected:
        raise TrailingBytesError(f"extents need {expected} bytes, file has {len(blob)}")

    offset = HEADER.size
    labels = np.frombuffer(blob, dtype="<u4", count=n_items, offset=offset)
    offset += 4 * n_items
    features = np.frombuffer(blob, dtype="<f4", count=n_items * n_tokens * dim, offset=offset)
    if not np.all(np.isfinite(features)):
        raise NonFinitePayloadError("payload contains NaN or Inf")

    pack = FeaturePack(
        kind=PackKind(kind),
        features=features.reshape(n_items, n_tokens, dim).astype(np.float32),
        labels=labels.astype(np.uint32),
    )
    return pack.validate()


def write_fpack(pack: FeaturePack, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_fpack(pack))
    logger.debug(f"wrote {path} ({pack.kind.name.lower()}, {pack.n_items}×{pack.n_tokens}×{pack.dim})")
    return path


def read_fpack(path: Union[str, Path]) -> FeaturePack:
    return decode_fpack(Path(path).read_bytes())


def hexdump(blob: bytes, width: int = 16) -> str:
    """Offset + hex bytes, one row per `width` bytes"""
    rows = []
    for offset in range(0, len(blob), width):
        chunk = blob[offset:offset + width]
        rows.append(f"{offset:08x}  {' '.join(f'{b:02x}' for b in chunk)}")
    return "\n".join(rows)
