"""Shared input validation helpers.

Every public entry point funnels its array arguments through these so error
messages stay uniform and every internal computation sees float64.
"""

import numpy as np


def as_rng(seed):
    """Return a numpy Generator from a seed, passing Generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_positions(positions, name="positions"):
    """Validate an (N, 3) coordinate array and return it as float64."""
    arr = np.asarray(positions, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(
            f"{name} must have shape (N, 3), got {arr.shape}"
        )
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one point")
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr).all(axis=1))[0, 0])
        raise ValueError(f"{name} contains a non-finite coordinate at row {bad}")
    return arr


def check_point_set(points, name="points"):
    """Like check_positions but also accepts a single batch (B, n, 3)."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 2:
        return check_positions(arr, name)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (n, 3) or (B, n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


def check_features(features, dim=None, name="features"):
    """Validate an (N, F) float feature matrix."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(
            f"{name} has {arr.shape[1]} columns, expected {dim}"
        )
    return arr


def check_labels(labels, n=None, n_classes=None, allow_unlabeled=False,
                 name="labels"):
    """Validate an integer label vector.

    Labels must be integers in [0, n_classes) when n_classes is given.
    allow_unlabeled additionally admits the -1 sentinel.
    """
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        flt = np.asarray(arr, dtype=np.float64)
        if not np.all(flt == np.floor(flt)):
            raise ValueError(f"{name} must be integers")
        arr = flt.astype(np.int64)
    arr = arr.astype(np.int64, copy=False)
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
    low = -1 if allow_unlabeled else 0
    if arr.size and arr.min() < low:
        raise ValueError(f"{name} contains id {int(arr.min())}, below {low}")
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        raise ValueError(
            f"{name} contains id {int(arr.max())}, outside [0, {n_classes})"
        )
    return arr


def check_indices(indices, n, name="indices"):
    """Validate point indices against a cloud of n points."""
    arr = np.asarray(indices)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name} must be integers")
    arr = arr.astype(np.int64, copy=False)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise ValueError(f"{name} out of range for {n} points")
    return arr
