"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_square_plane(plane, name: str = "plane") -> np.ndarray:
    """Coerce to a finite float64 square 2D array or raise ValueError."""
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_cutoff(cutoff: int, size: int) -> int:
    if not isinstance(cutoff, (int, np.integer)):
        raise ValueError(f"cutoff must be an integer, got {type(cutoff).__name__}")
    limit = 2 * (size - 1)
    if not 0 <= cutoff <= limit:
        raise ValueError(f"cutoff must be in [0, {limit}] for size {size}, got {cutoff}")
    return int(cutoff)


def as_image_batch(images, name: str = "images") -> np.ndarray:
    """Coerce to (N, C, H, W) float arrays; a (N, H, W) batch gains a channel axis."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[:, None, :, :]
    if arr.ndim != 4:
        raise ValueError(f"{name} must have shape (N, H, W) or (N, C, H, W), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name: str):
    if value is None or not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value


def check_non_negative(value, name: str):
    if value is None or value < 0:
        raise ValueError(f"{name} must be non-negative, got {value!r}")
    return value
