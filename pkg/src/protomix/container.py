"""Binary container for a hyperspectral cube paired with its label grid.

Layout (little-endian): magic ``HSIC``, version u32 = 1, width u32,
height u32, bands u32, then width*height*bands float32 reflectance values in
(row, col, band) order, then width*height uint16 labels in (row, col) order,
0 meaning unlabeled.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import HsiCube, LabelMap
from .errors import ContainerFormatError, DataError, DimensionMismatchError

MAGIC = b"HSIC"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def save_cube(path, cube: HsiCube, labels: LabelMap):
    """Write a cube/label pair; dimensions must agree."""
    if labels.labels.shape != (cube.height, cube.width):
        raise DimensionMismatchError(
            f"labels grid {labels.labels.shape} does not match cube "
            f"{(cube.height, cube.width)}"
        )
    header = _HEADER.pack(MAGIC, VERSION, cube.width, cube.height, cube.bands)
    payload = cube.data.astype("<f4", copy=False).tobytes()
    label_bytes = labels.labels.astype("<u2", copy=False).tobytes()
    Path(path).write_bytes(header + payload + label_bytes)


def load_cube(path):
    """Read a container file back into an (HsiCube, LabelMap) pair."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContainerFormatError(f"{path}: file shorter than header")
    magic, version, width, height, bands = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ContainerFormatError(f"{path}: unsupported version {version}")
    n_pixels = width * height
    data_bytes = n_pixels * bands * 4
    label_bytes = n_pixels * 2
    expected = _HEADER.size + data_bytes + label_bytes
    if len(raw) < expected:
        raise ContainerFormatError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}"
        )
    if len(raw) > expected:
        raise DimensionMismatchError(
            f"{path}: {len(raw) - expected} trailing bytes; labels grid does "
            "not match the cube dimensions in the header"
        )
    data = np.frombuffer(raw, dtype="<f4", count=n_pixels * bands, offset=_HEADER.size)
    data = data.reshape(height, width, bands).copy()
    if not np.isfinite(data).all():
        raise DataError(f"{path}: cube contains non-finite values")
    labels = np.frombuffer(raw, dtype="<u2", count=n_pixels, offset=_HEADER.size + data_bytes)
    labels = labels.reshape(height, width).copy()
    return HsiCube(data), LabelMap(labels)


def convert_npy(data_path, labels_path, out_path):
    """Convert a (height, width, bands) .npy cube and (height, width) .npy
    label grid into the container format."""
    data = np.load(data_path)
    labels = np.load(labels_path)
    if data.ndim != 3:
        raise DataError(f"{data_path}: expected a (height, width, bands) array, got shape {data.shape}")
    if labels.ndim != 2:
        raise DataError(f"{labels_path}: expected a (height, width) array, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > np.iinfo(np.uint16).max:
        raise DataError(f"{labels_path}: labels must fit in uint16 with 0 = unlabeled")
    cube = HsiCube(data.astype(np.float32))
    label_map = LabelMap(labels.astype(np.uint16))
    save_cube(out_path, cube, label_map)
    return cube, label_map
