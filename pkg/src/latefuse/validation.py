"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_score_matrix(scores, name: str = "scores") -> np.ndarray:
    """Coerce a sequence of (logit_real, logit_fake) pairs to an (N, 2) float array."""
    arr = np.asarray(scores, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must be a non-empty sequence of 2-vectors, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_float_vector(values, name: str = "values", *, allow_empty: bool = False) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_probability_vector(values, name: str = "scores") -> np.ndarray:
    arr = as_float_vector(values, name)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def as_binary_labels(labels, name: str = "labels") -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty one-dimensional sequence")
    arr = arr.astype(np.int64)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0 (real) and 1 (fake)")
    return arr


def check_consistent_length(n_a: int, n_b: int, what: str) -> None:
    if n_a != n_b:
        raise ValueError(f"{what}: lengths differ ({n_a} vs {n_b})")


def check_interval(start_ms, end_ms, name: str = "interval") -> None:
    if not (np.isfinite(start_ms) and np.isfinite(end_ms)):
        raise ValueError(f"{name} has non-finite endpoints")
    if start_ms >= end_ms:
        raise ValueError(f"{name} is degenerate: start {start_ms} >= end {end_ms}")


def readonly(arr: np.ndarray) -> np.ndarray:
    """Return a C-contiguous copy with the writeable flag cleared."""
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.setflags(write=False)
    return out
