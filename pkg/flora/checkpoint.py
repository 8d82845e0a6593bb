"""
Checkpoint container (FLORACKP)
===============================

Little-endian, same discipline as FPACK:

    magic     8 bytes  b"FLORACKP"
    version   u32      1
    n_blocks  u32
    per block:
        name_len  u32
        name      name_len bytes, UTF-8
        ndim      u32
        shape     ndim × u32
        payload   prod(shape) × IEEE-754 binary64

Blocks are written in `Module.named_parameters` order, so identical
parameters give byte-identical files.
"""

import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from flora.core.nn import Module
from flora.errors import BadMagicError, CheckpointError, MissingInputError, TrailingBytesError, TruncatedPayloadError, VersionMismatchError

logger = logging.getLogger("flora")

MAGIC = b"FLORACKP"
VERSION = 1
HEADER = struct.Struct("<8sII")
U32 = struct.Struct("<I")


def encode_checkpoint(state: Dict[str, np.ndarray]) -> bytes:
    parts = [HEADER.pack(MAGIC, VERSION, len(state))]
    for name, value in state.items():
        value = np.asarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        parts.append(U32.pack(len(encoded)) + encoded)
        parts.append(U32.pack(value.ndim) + b"".join(U32.pack(s) for s in value.shape))
        parts.append(value.astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise TruncatedPayloadError(f"checkpoint truncated while reading {what} at byte {self.offset}")
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what: str) -> int:
        return U32.unpack(self.take(4, what))[0]


def decode_checkpoint(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    """
    Parse FLORACKP bytes into an ordered name → array mapping

    Raises:
        BadMagicError, VersionMismatchError, TruncatedPayloadError,
        TrailingBytesError, CheckpointError (malformed block)
    """
    if blob[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, got {bytes(blob[:len(MAGIC)])!r}")
    reader = _Reader(blob)
    _, version, n_blocks = HEADER.unpack(reader.take(HEADER.size, "header"))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, reader supports {VERSION}")

    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(n_blocks):
        name_len = reader.u32("name length")
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"block name at byte {reader.offset - name_len} is not UTF-8")
        if name in state:
            raise CheckpointError(f"duplicate block '{name}'")
        ndim = reader.u32(f"{name} ndim")
        shape = tuple(reader.u32(f"{name} shape") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        payload = reader.take(8 * count, f"{name} payload")
        state[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)

    if reader.offset != len(blob):
        raise TrailingBytesError(f"{len(blob) - reader.offset} bytes after the last block")
    return state


def save_checkpoint(module: Module, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = module.state_dict()
    path.write_bytes(encode_checkpoint(state))
    logger.info(f"💾 Checkpoint {path} ({len(state)} blocks, {module.num_parameters()} parameters)")
    return path


def load_checkpoint(module: Module, path: Union[str, Path]) -> Module:
    """Load a checkpoint into an already-built module; names and shapes must match"""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    module.load_state_dict(decode_checkpoint(path.read_bytes()))
    return module


def read_checkpoint_header(path: Union[str, Path]) -> Dict:
    """Version, block names and shapes, for `flora inspect`"""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    state = decode_checkpoint(path.read_bytes())
    blocks: List[Tuple[str, Tuple[int, ...]]] = [(name, value.shape) for name, value in state.items()]
    return {
        "magic": MAGIC.decode("ascii"),
        "version": VERSION,
        "n_blocks": len(blocks),
        "n_parameters": int(sum(value.size for value in state.values())),
        "blocks": [{"name": name, "shape": list(shape)} for name, shape in blocks],
    }
