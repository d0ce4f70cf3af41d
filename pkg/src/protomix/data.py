"""Hyperspectral scene handling: cubes, label maps, patch extraction with
mirror padding, boundary flagging, the few-shot split, crop-and-resize
augmentation, and synthetic scene generation for hermetic tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, SplitError


@dataclass
class HsiCube:
    """A raster hypercube stored as float32 with shape (height, width, bands)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise DataError(f"cube must be (height, width, bands), got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise DataError(f"cube dimensions must be positive, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise DataError("cube contains non-finite values")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]


@dataclass
class LabelMap:
    """Per-pixel class ids with the same extent as the paired cube; 0 = unlabeled."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if self.labels.ndim != 2:
            raise DataError(f"label map must be (height, width), got shape {self.labels.shape}")

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def class_ids(self):
        """Sorted class ids present in the map (excluding unlabeled)."""
        present = np.unique(self.labels)
        return [int(c) for c in present if c != 0]

    def missing_classes(self, expected):
        """Report which of the expected class ids never occur."""
        present = set(self.class_ids())
        return [c for c in expected if c not in present]


@dataclass
class PatchSample:
    """A square patch centered on a labeled pixel."""

    pixels: np.ndarray  # (patch, patch, bands)
    label: int
    center: tuple[int, int]
    is_boundary: bool = False


@dataclass(frozen=True)
class SplitSpec:
    """Few-shot labeling budget: shots kept per class and the augmentation target."""

    shots_per_class: int = 5
    augment_to: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.shots_per_class < 1:
            raise ConfigError(f"shots_per_class must be >= 1, got {self.shots_per_class}")
        if self.augment_to < self.shots_per_class:
            raise ConfigError(
                f"augment_to ({self.augment_to}) must be >= shots_per_class ({self.shots_per_class})"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


def reflect_index(i, n):
    """Map integer positions onto [0, n) by mirror reflection about the edges."""
    if n == 1:
        return np.zeros_like(np.asarray(i))
    period = 2 * (n - 1)
    m = np.mod(i, period)
    return np.where(m >= n, period - m, m)


def _window_indices(center, size, extent):
    half = size // 2
    return reflect_index(np.arange(center - half, center + half + 1), extent)


def _check_center(labels: LabelMap, center, patch_size):
    if patch_size < 1 or patch_size % 2 == 0:
        raise ConfigError(f"patch_size must be odd and positive, got {patch_size}")
    row, col = center
    if not (0 <= row < labels.height and 0 <= col < labels.width):
        raise ValueError(f"center {center} outside the {labels.height}x{labels.width} image")
    if labels.labels[row, col] == 0:
        raise ValueError(f"center {center} is unlabeled")


def label_window(labels: LabelMap, center, patch_size):
    """The patch-sized label window around center, mirror-padded at borders."""
    rows = _window_indices(center[0], patch_size, labels.height)
    cols = _window_indices(center[1], patch_size, labels.width)
    return labels.labels[np.ix_(rows, cols)]


def detect_boundary(labels: LabelMap, center, patch_size):
    """A patch is a boundary patch when its label window mixes classes.

    Unlabeled pixels in the window count as a differing class.
    """
    _check_center(labels, center, patch_size)
    window = label_window(labels, center, patch_size)
    if (window == 0).any():
        return True
    return np.unique(window).size > 1


def extract_patch(cube: HsiCube, labels: LabelMap, center, patch_size):
    """Cut the patch centered on a labeled pixel, mirror-padding at borders."""
    if labels.labels.shape != (cube.height, cube.width):
        raise DataError(
            f"label map {labels.labels.shape} does not match cube extent "
            f"{(cube.height, cube.width)}"
        )
    _check_center(labels, center, patch_size)
    rows = _window_indices(center[0], patch_size, cube.height)
    cols = _window_indices(center[1], patch_size, cube.width)
    pixels = cube.data[np.ix_(rows, cols)].copy()
    return PatchSample(
        pixels=pixels,
        label=int(labels.labels[center[0], center[1]]),
        center=(int(center[0]), int(center[1])),
        is_boundary=detect_boundary(labels, center, patch_size),
    )


def labeled_centers(labels: LabelMap):
    """All labeled pixel coordinates in row-major order."""
    rows, cols = np.nonzero(labels.labels)
    return list(zip(rows.tolist(), cols.tolist()))


def extract_all_patches(cube: HsiCube, labels: LabelMap, patch_size, centers=None):
    if centers is None:
        centers = labeled_centers(labels)
    return [extract_patch(cube, labels, c, patch_size) for c in centers]


def group_by_class(samples):
    """Group samples into {class id: [samples]} preserving input order."""
    pools: dict[int, list[PatchSample]] = {}
    for s in samples:
        pools.setdefault(int(s.label), []).append(s)
    return pools


def split_few_shot(samples, spec: SplitSpec):
    """Draw shots_per_class labeled samples per class; the rest become the test set.

    Sampling is uniform without replacement and fully determined by spec.seed.
    """
    pools = group_by_class(samples)
    rng = np.random.default_rng(spec.seed)
    labeled, test = [], []
    for class_id in sorted(pools):
        group = pools[class_id]
        if len(group) < spec.shots_per_class:
            raise SplitError(
                f"class {class_id} has {len(group)} samples, fewer than "
                f"shots_per_class={spec.shots_per_class}"
            )
        chosen = set(rng.choice(len(group), size=spec.shots_per_class, replace=False).tolist())
        for i, sample in enumerate(group):
            (labeled if i in chosen else test).append(sample)
    return labeled, test


def bilinear_resize(image, out_size):
    """Resize a square (s, s, ...) array to (out_size, out_size, ...) by
    bilinear interpolation with a corner-aligned grid, independently per band.
    """
    image = np.asarray(image, dtype=np.float64)
    s = image.shape[0]
    if image.shape[1] != s:
        raise DataError(f"bilinear_resize expects a square input, got {image.shape}")
    if s == out_size:
        return image.copy()

    def axis_coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out, dtype=int), np.zeros(n_out)
        src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        i0 = np.clip(np.floor(src).astype(int), 0, n_in - 2)
        return i0, src - i0

    r0, fr = axis_coords(s, out_size)
    c0, fc = axis_coords(s, out_size)
    r1 = np.minimum(r0 + 1, s - 1)
    c1 = np.minimum(c0 + 1, s - 1)
    extra = (1,) * (image.ndim - 2)
    fr = fr.reshape(-1, 1, *extra)
    fc = fc.reshape(1, -1, *extra)
    top = image[np.ix_(r0, c0)] * (1 - fc) + image[np.ix_(r0, c1)] * fc
    bottom = image[np.ix_(r1, c0)] * (1 - fc) + image[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bottom * fr


def crop_sides(patch_size):
    """Odd crop side lengths used by the augmentation (5,7,9 for 9x9 patches)."""
    lo = max(3, patch_size - 4)
    return [s for s in range(lo, patch_size + 1) if s % 2 == 1]


def augment_target(labeled, spec: SplitSpec, seed):
    """Grow each class to exactly spec.augment_to samples.

    Synthetic samples take a random centered odd-sided crop of a randomly
    chosen original and resize it back to the patch size band by band;
    originals are kept, labels and boundary flags are inherited.
    """
    if not labeled:
        raise DataError("augment_target requires a non-empty labeled set")
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    pools = group_by_class(labeled)
    rng = np.random.default_rng([seed, 0xA06])
    sides = crop_sides(labeled[0].pixels.shape[0])
    out = []
    for class_id in sorted(pools):
        group = pools[class_id]
        if len(group) > spec.augment_to:
            raise DataError(
                f"class {class_id} already has {len(group)} samples, more than "
                f"augment_to={spec.augment_to}"
            )
        out.extend(group)
        for _ in range(spec.augment_to - len(group)):
            origin = group[rng.integers(len(group))]
            side = sides[rng.integers(len(sides))]
            patch = origin.pixels.shape[0]
            start = (patch - side) // 2
            cropped = origin.pixels[start:start + side, start:start + side]
            if side == patch:
                pixels = cropped.copy()
            else:
                pixels = bilinear_resize(cropped, patch).astype(np.float32)
            out.append(
                PatchSample(
                    pixels=pixels,
                    label=origin.label,
                    center=origin.center,
                    is_boundary=origin.is_boundary,
                )
            )
    return out


def synth_dataset(n_classes, bands, region_grid, noise_sigma, seed, width=40, height=40):
    """Generate a deterministic synthetic scene for hermetic testing.

    The image is split into a rows x cols grid of rectangular regions and
    classes are assigned round-robin; every pixel's spectrum is its class
    mean (seeded, entries in [0, 1]) plus Gaussian noise of scale
    noise_sigma. Adjacent regions of different classes create boundary
    pixels by construction.
    """
    rows, cols = region_grid
    if rows < 1 or cols < 1:
        raise ConfigError(f"region grid must be positive, got {region_grid}")
    if rows * cols < n_classes:
        raise ConfigError(
            f"region grid {rows}x{cols} has fewer cells than n_classes={n_classes}"
        )
    if n_classes < 1 or bands < 1 or width < 1 or height < 1:
        raise ConfigError("n_classes, bands, width, and height must be positive")
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be non-negative, got {noise_sigma}")
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")

    rng = np.random.default_rng([seed, 0x5C])
    means = rng.uniform(0.0, 1.0, size=(n_classes, bands))

    labels = np.zeros((height, width), dtype=np.uint16)
    row_blocks = np.array_split(np.arange(height), rows)
    col_blocks = np.array_split(np.arange(width), cols)
    for ri, row_block in enumerate(row_blocks):
        for ci, col_block in enumerate(col_blocks):
            class_id = (ri * cols + ci) % n_classes + 1
            labels[np.ix_(row_block, col_block)] = class_id

    data = means[labels - 1].astype(np.float64)
    if noise_sigma > 0:
        data = data + noise_sigma * rng.standard_normal((height, width, bands))
    return HsiCube(data.astype(np.float32)), LabelMap(labels)
