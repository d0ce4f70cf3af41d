"""Checkpoint container: model configuration plus named float64 tensors.

Layout (little-endian): magic ``APNT``, version u32 = 1, the six model
configuration fields as u32 (d_model, n_heads, d_head, d_feed, n_encoders,
patch_size), then a directory of named tensors until end of file - each
entry is name length u16, UTF-8 name, rank u32, one u32 per dimension, and
the float64 payload in row-major order. Optimizer state and the training
step counter are stored as ordinary named tensors.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import TransformerConfig

MAGIC = b"APNT"
VERSION = 1
_CONFIG_FIELDS = ("d_model", "n_heads", "d_head", "d_feed", "n_encoders", "patch_size")


def save_checkpoint(path, cfg: TransformerConfig, named):
    """Write config and the named tensor directory; iteration order is kept."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack("<6I", *(getattr(cfg, f) for f in _CONFIG_FIELDS)))
    for name, array in named.items():
        array = np.asarray(array, dtype=np.float64)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape) if array.ndim else b"")
        parts.append(array.astype("<f8", copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Read a checkpoint back into (TransformerConfig, {name: float64 array})."""
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 8
    try:
        values = struct.unpack_from("<6I", raw, offset)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated config block") from exc
    offset += 24
    cfg = TransformerConfig(**dict(zip(_CONFIG_FIELDS, (int(v) for v in values))))
    named: dict[str, np.ndarray] = {}
    while offset < len(raw):
        try:
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if offset + 8 * count > len(raw):
                raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
            array = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt tensor directory") from exc
        named[name] = array.reshape(dims).copy()
    return cfg, named
