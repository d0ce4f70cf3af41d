"""Rectangular query mixing and label-weight derivation.

A mixed query keeps sample i's pixels where the mask is 1 and pastes sample
k's pixels inside a random rectangle where the mask is 0. The two label
weights come either from the area proportion (cutmix mode) or from the
attention mass each sample contributes over its surviving region (transmix
mode), normalized to sum one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, MixingError, NumericError, ShapeError


@dataclass
class MixMask:
    """Binary grid: 1 keeps the pixel from sample i, 0 takes it from sample k.

    The zero region is a single axis-aligned rectangle described by box =
    (top, left, height, width), never empty and never the whole patch.
    """

    grid: np.ndarray
    box: tuple[int, int, int, int]

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.uint8)
        if self.grid.ndim != 2:
            raise ShapeError(f"mask grid must be 2-d, got shape {self.grid.shape}")
        top, left, height, width = self.box
        expected = np.ones_like(self.grid)
        expected[top:top + height, left:left + width] = 0
        if not np.array_equal(self.grid, expected):
            raise ShapeError("mask zero region is not exactly the stated box")
        zeros = height * width
        if not 1 <= zeros <= self.grid.size - 1:
            raise ShapeError(f"mask zero area {zeros} outside [1, {self.grid.size - 1}]")


@dataclass
class MixedQuery:
    """A synthetic query: mixed pixels plus the two source labels and weights."""

    pixels: np.ndarray
    source_i: int
    source_k: int
    label_i: int
    label_k: int
    lambda_1: float
    lambda_2: float
    mask: MixMask


def sample_mask(patch_size, rng):
    """Draw a mask: area fraction a ~ U(0,1), box sides round(size * sqrt(a))
    clamped to [1, size - 1], position uniform over fitting placements."""
    if patch_size < 2:
        raise ConfigError(f"patch_size must be >= 2 to mix, got {patch_size}")
    a = rng.uniform(0.0, 1.0)
    side = int(np.rint(patch_size * np.sqrt(a)))
    box_h = min(max(side, 1), patch_size - 1)
    box_w = min(max(side, 1), patch_size - 1)
    top = int(rng.integers(0, patch_size - box_h + 1))
    left = int(rng.integers(0, patch_size - box_w + 1))
    grid = np.ones((patch_size, patch_size), dtype=np.uint8)
    grid[top:top + box_h, left:left + box_w] = 0
    return MixMask(grid=grid, box=(top, left, box_h, box_w))


def apply_mix(x_i, x_k, mask: MixMask):
    """Per-pixel selection: x_i where mask is 1, x_k inside the box."""
    x_i = np.asarray(x_i)
    x_k = np.asarray(x_k)
    if x_i.shape != x_k.shape:
        raise ShapeError(f"mixed patches must share a shape, got {x_i.shape} and {x_k.shape}")
    if x_i.shape[:2] != mask.grid.shape:
        raise ShapeError(f"mask {mask.grid.shape} does not cover patches {x_i.shape[:2]}")
    keep = mask.grid.astype(bool)
    if x_i.ndim > 2:
        keep = keep.reshape(keep.shape + (1,) * (x_i.ndim - 2))
    return np.where(keep, x_i, x_k)


def cutmix_lambdas(mask: MixMask):
    """Area-proportion label weights: kept fraction and box fraction."""
    ones = int(mask.grid.sum())
    lambda_1 = ones / mask.grid.size
    return lambda_1, 1.0 - lambda_1


def transmix_raw_sums(mask: MixMask, att_i, att_k):
    """Attention mass of sample i over the kept region and of sample k over
    the box. Works on float arrays, autodiff tensors, and exact-rational
    object arrays alike."""
    if isinstance(att_i, Tensor) or isinstance(att_k, Tensor):
        keep = mask.grid.astype(np.float64)
        drop = 1.0 - keep
    elif getattr(att_i, "dtype", None) == object or getattr(att_k, "dtype", None) == object:
        keep = mask.grid.astype(object)
        drop = 1 - keep
    else:
        keep = mask.grid.astype(np.float64)
        drop = 1.0 - keep
    raw_1 = (att_i * keep).sum()
    raw_2 = (att_k * drop).sum()
    return raw_1, raw_2


def _scalar(value):
    if isinstance(value, Tensor):
        return float(value.data)
    return float(value)


def transmix_lambdas(mask: MixMask, att_i, att_k):
    """Attention-mass label weights, normalized so lambda_1 + lambda_2 = 1."""
    raw_1, raw_2 = transmix_raw_sums(mask, att_i, att_k)
    total = raw_1 + raw_2
    if not _scalar(total) > 0:
        raise NumericError("attention mass over both mix regions is zero")
    return raw_1 / total, raw_2 / total


def draw_pairs(n_queries, patch_size, rng):
    """Draw (partner, mask) for each query: partner uniform over the others,
    one mask per pair, consumed in input order. The draws do not depend on
    the label-weight mode, so cutmix and transmix runs with the same rng
    state mix identical pixels."""
    if n_queries < 2:
        raise MixingError(f"mixing needs at least 2 queries, got {n_queries}")
    pairs = []
    for i in range(n_queries):
        k = int(rng.integers(n_queries - 1))
        if k >= i:
            k += 1
        pairs.append((k, sample_mask(patch_size, rng)))
    return pairs


def mix_query_set(queries, attention_maps, mode, rng):
    """Mix every query with a uniformly drawn other query.

    ``attention_maps`` (one W x H array per query, from the original
    queries' forward pass) is only consulted in transmix mode.
    """
    if mode not in ("cutmix", "transmix"):
        raise ConfigError(f"unknown mix mode {mode!r}")
    n = len(queries)
    if mode == "transmix" and (attention_maps is None or len(attention_maps) != n):
        raise MixingError("transmix mode needs one attention map per query")
    patch_size = queries[0].pixels.shape[0] if n else 0
    mixed = []
    for i, (k, mask) in enumerate(draw_pairs(n, patch_size, rng)):
        pixels = apply_mix(queries[i].pixels, queries[k].pixels, mask)
        if mode == "cutmix":
            lam_1, lam_2 = cutmix_lambdas(mask)
        else:
            lam_1, lam_2 = transmix_lambdas(mask, attention_maps[i], attention_maps[k])
        mixed.append(
            MixedQuery(
                pixels=pixels,
                source_i=i,
                source_k=k,
                label_i=int(queries[i].label),
                label_k=int(queries[k].label),
                lambda_1=_scalar(lam_1),
                lambda_2=_scalar(lam_2),
                mask=mask,
            )
        )
    return mixed
