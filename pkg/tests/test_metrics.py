"""Accuracy/forgetting summaries versus an independent brute-force rewrite."""

import numpy as np
import pytest

from sfdnet.metrics import (
    accuracy_series,
    as_accuracy_matrix,
    average_accuracy,
    average_forgetting,
    forgetting_series,
)


def brute_accuracy(matrix, k):
    """Oracle: literal loops over the definition, 1-based indices."""
    total = 0.0
    for j in range(1, k + 1):
        total += matrix[k - 1][j - 1]
    return total / k


def brute_forgetting(matrix, k):
    total = 0.0
    for j in range(1, k):
        best = -np.inf
        for l in range(j, k):  # a[l][j] exists only for l >= j
            best = max(best, matrix[l - 1][j - 1])
        total += best - matrix[k - 1][j - 1]
    return total / (k - 1)


def random_matrix(rng, count):
    matrix = np.full((count, count), np.nan)
    for k in range(count):
        matrix[k, :k + 1] = rng.random(k + 1)
    return matrix


def test_hand_example():
    matrix = np.array([[0.9, np.nan], [0.8, 0.7]])
    assert average_forgetting(matrix, 2) == pytest.approx(0.1, abs=1e-15)
    assert average_accuracy(matrix, 2) == pytest.approx(0.75)
    assert average_accuracy(matrix, 1) == pytest.approx(0.9)


def test_accuracy_row_mean():
    matrix = np.array([[0.8, np.nan], [0.8, 0.6]])
    assert average_accuracy(matrix, 2) == pytest.approx(0.7)


def test_constant_matrix():
    matrix = np.full((4, 4), np.nan)
    for k in range(4):
        matrix[k, :k + 1] = 0.42
    for k in range(1, 5):
        assert average_accuracy(matrix, k) == pytest.approx(0.42)
    for k in range(2, 5):
        assert average_forgetting(matrix, k) == pytest.approx(0.0, abs=1e-15)


def test_negative_forgetting_not_clamped():
    # accuracy on task 1 improves after task 2: backward transfer
    matrix = np.array([[0.5, np.nan], [0.9, 0.8]])
    assert average_forgetting(matrix, 2) == pytest.approx(-0.4)


@pytest.mark.parametrize("count", [1, 2, 5, 10])
def test_matches_brute_force(count):
    rng = np.random.default_rng(count)
    for _ in range(50):
        matrix = random_matrix(rng, count)
        for k in range(1, count + 1):
            assert abs(average_accuracy(matrix, k) - brute_accuracy(matrix, k)) <= 1e-12
        for k in range(2, count + 1):
            assert abs(average_forgetting(matrix, k) - brute_forgetting(matrix, k)) <= 1e-12


def test_series_shapes():
    matrix = random_matrix(np.random.default_rng(0), 6)
    acc = accuracy_series(matrix)
    forg = forgetting_series(matrix)
    assert acc.shape == forg.shape == (6,)
    assert np.isnan(forg[0]) and not np.any(np.isnan(forg[1:]))
    assert np.all((acc >= 0) & (acc <= 1))


def test_range_invariants():
    rng = np.random.default_rng(7)
    for _ in range(200):
        matrix = random_matrix(rng, 4)
        for k in range(2, 5):
            f = average_forgetting(matrix, k)
            assert -1.0 <= f <= 1.0


def test_validation_errors():
    good = random_matrix(np.random.default_rng(1), 3)
    with pytest.raises(ValueError):
        average_accuracy(good, 0)
    with pytest.raises(ValueError):
        average_accuracy(good, 4)
    with pytest.raises(ValueError):
        average_forgetting(good, 1)
    bad = good.copy()
    bad[2, 1] = 1.5
    with pytest.raises(ValueError):
        as_accuracy_matrix(bad)
    hole = good.copy()
    hole[1, 0] = np.nan
    with pytest.raises(ValueError):
        as_accuracy_matrix(hole)
    with pytest.raises(ValueError):
        as_accuracy_matrix(np.zeros((2, 3)))
