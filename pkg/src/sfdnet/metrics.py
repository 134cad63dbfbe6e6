"""Incremental-learning accuracy and forgetting summaries.

Both summaries read a lower-triangular accuracy matrix a[k][j]: accuracy on
task j's test split measured after training task k, defined for 1 <= j <= k.
Entries above the diagonal are undefined and stored as NaN.
"""

from __future__ import annotations

import numpy as np


def as_accuracy_matrix(matrix) -> np.ndarray:
    """Validate a (K, K) accuracy matrix; defined cells in [0, 1], NaN above diag."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"accuracy matrix must be square 2D, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("accuracy matrix must be non-empty")
    tri = np.tril_indices(arr.shape[0])
    defined = arr[tri]
    if not np.all(np.isfinite(defined)):
        raise ValueError("accuracy matrix has undefined entries on or below the diagonal")
    if np.any(defined < 0.0) or np.any(defined > 1.0):
        raise ValueError("accuracies must lie in [0, 1]")
    return arr


def average_accuracy(matrix, k: int) -> float:
    """Mean accuracy over tasks 1..k after training task k (1-based k)."""
    arr = as_accuracy_matrix(matrix)
    if not 1 <= k <= arr.shape[0]:
        raise ValueError(f"k must be in [1, {arr.shape[0]}], got {k}")
    return float(np.mean(arr[k - 1, :k]))


def average_forgetting(matrix, k: int) -> float:
    """Mean over tasks j < k of the max past accuracy on j minus the current one.

    f_j^k = max over l in {j..k-1} of (a[l][j] - a[k][j]); the mean is over
    j = 1..k-1 and is not clamped, so a negative value means backward transfer.
    Requires k >= 2.
    """
    arr = as_accuracy_matrix(matrix)
    if not 2 <= k <= arr.shape[0]:
        raise ValueError(f"k must be in [2, {arr.shape[0]}], got {k}")
    row = arr[k - 1]
    drops = [np.max(arr[j - 1 : k - 1, j - 1]) - row[j - 1] for j in range(1, k)]
    return float(np.mean(drops))


def accuracy_series(matrix) -> np.ndarray:
    """average_accuracy for every k, as a length-K vector."""
    arr = as_accuracy_matrix(matrix)
    return np.array([average_accuracy(arr, k) for k in range(1, arr.shape[0] + 1)])


def forgetting_series(matrix) -> np.ndarray:
    """average_forgetting for k = 2..K; NaN at position 0 where it is undefined."""
    arr = as_accuracy_matrix(matrix)
    out = np.full(arr.shape[0], np.nan)
    for k in range(2, arr.shape[0] + 1):
        out[k - 1] = average_forgetting(arr, k)
    return out
