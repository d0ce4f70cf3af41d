"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def check_patch_stack(X, patch_size=None, bands=None, name="X"):
    """Validate a (n_samples, patch, patch, bands) stack of square patches."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise DataError(f"{name} must be 4-d (samples, patch, patch, bands), got shape {X.shape}")
    if X.shape[0] == 0:
        raise DataError(f"{name} has no samples")
    if X.shape[1] != X.shape[2]:
        raise DataError(f"{name} patches must be square, got {X.shape[1]}x{X.shape[2]}")
    if X.shape[1] % 2 == 0:
        raise DataError(f"{name} patch size must be odd, got {X.shape[1]}")
    if patch_size is not None and X.shape[1] != patch_size:
        raise DataError(f"{name} patches are {X.shape[1]}x{X.shape[1]}, expected {patch_size}x{patch_size}")
    if bands is not None and X.shape[3] != bands:
        raise DataError(f"{name} has {X.shape[3]} bands, expected {bands}")
    if not np.isfinite(X).all():
        raise DataError(f"{name} contains non-finite values")
    return X


def check_labels(y, n_samples, name="y"):
    """Validate an integer label vector aligned with the sample axis."""
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise DataError(f"{name} must be 1-d with {n_samples} entries, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.asarray(y, dtype=np.int64)
        if not np.array_equal(rounded, y):
            raise DataError(f"{name} must contain integer class labels")
        y = rounded
    return y
