"""Orthonormal 2D cosine transform and frequency-band decomposition.

The forward transform of an N x N plane is F = B f B^T where B is the
orthonormal type-II cosine basis

    B[k, m] = c(k) * cos((2m + 1) k pi / (2N)),
    c(0) = sqrt(1/N), c(k) = sqrt(2/N) for k > 0,

so the inverse is the type-III transform f = B^T F B and Parseval's identity
holds exactly: sum(f^2) == sum(F^2).

Band splitting partitions coefficients along anti-diagonals: a coefficient at
(k, l) is "low" when k + l <= cutoff, "high" otherwise. Low frequencies sit in
the upper-left corner of the spectrum. The two band reconstructions sum back to
the original plane because the transform is linear.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import as_image_batch, as_square_plane, check_cutoff


@lru_cache(maxsize=32)
def dct_basis(size: int) -> np.ndarray:
    """Return the (size, size) orthonormal cosine basis matrix B."""
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    k = np.arange(size)[:, None].astype(np.float64)
    m = np.arange(size)[None, :].astype(np.float64)
    basis = np.cos((2.0 * m + 1.0) * k * np.pi / (2.0 * size))
    scale = np.full((size, 1), np.sqrt(2.0 / size))
    scale[0, 0] = np.sqrt(1.0 / size)
    out = scale * basis
    out.setflags(write=False)
    return out


def dct2(plane) -> np.ndarray:
    """Forward orthonormal 2D cosine transform of a square plane."""
    plane = as_square_plane(plane)
    basis = dct_basis(plane.shape[0])
    return basis @ plane @ basis.T


def idct2(spectrum) -> np.ndarray:
    """Inverse of :func:`dct2`."""
    spectrum = as_square_plane(spectrum, name="spectrum")
    basis = dct_basis(spectrum.shape[0])
    return basis.T @ spectrum @ basis


def frequency_mask(size: int, cutoff: int, band: str = "low") -> np.ndarray:
    """Boolean mask selecting the low (k + l <= cutoff) or high band."""
    cutoff = check_cutoff(cutoff, size)
    if band not in ("low", "high"):
        raise ValueError(f"band must be 'low' or 'high', got {band!r}")
    k = np.arange(size)[:, None]
    l = np.arange(size)[None, :]
    low = (k + l) <= cutoff
    return low if band == "low" else ~low


def split_spectrum(spectrum, cutoff: int):
    """Split a spectrum into (low, high) parts that sum to the input."""
    spectrum = as_square_plane(spectrum, name="spectrum")
    mask = frequency_mask(spectrum.shape[0], cutoff, band="low")
    low = np.where(mask, spectrum, 0.0)
    return low, spectrum - low


def band_reconstructions(plane, cutoff: int):
    """Return (original, low, high) reconstructions of one plane.

    `original` is the round trip through the transform, and the low and high
    reconstructions are inverse transforms of the two spectrum parts, so
    low + high recovers the original up to floating point error.
    """
    plane = as_square_plane(plane)
    spectrum = dct2(plane)
    low_spec, high_spec = split_spectrum(spectrum, cutoff)
    return idct2(spectrum), idct2(low_spec), idct2(high_spec)


def default_cutoff(size: int) -> int:
    return size // 4


def band_triplet_stack(images, cutoff: int | None = None) -> np.ndarray:
    """Stack (original, low, high) reconstructions along the channel axis.

    Args:
        images: (N, H, W) or (N, C, H, W) batch with square spatial dims.
        cutoff: anti-diagonal band boundary; defaults to H // 4.

    Returns:
        (N, 3C, H, W) float64 array ordered [original, low, high] with each
        block holding the input channels in their original order.
    """
    batch = as_image_batch(images)
    n, c, h, w = batch.shape
    if h != w:
        raise ValueError(f"images must be square, got {h}x{w}")
    if cutoff is None:
        cutoff = default_cutoff(h)
    cutoff = check_cutoff(cutoff, h)

    basis = dct_basis(h)
    mask = frequency_mask(h, cutoff, band="low")
    flat = batch.reshape(n * c, h, w)
    spectra = np.einsum("km,xmn,ln->xkl", basis, flat, basis, optimize=True)
    low_spec = spectra * mask
    high_spec = spectra - low_spec

    def inverse(spec):
        return np.einsum("km,xkl,ln->xmn", basis, spec, basis, optimize=True)

    out = np.concatenate(
        [inverse(spectra), inverse(low_spec), inverse(high_spec)], axis=0
    )
    return out.reshape(3, n, c, h, w).transpose(1, 0, 2, 3, 4).reshape(n, 3 * c, h, w)


class FrequencyTripletTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer producing the (original, low, high) channel stack.

    Parameters
    ----------
    cutoff : int or None
        Band boundary on k + l; None selects size // 4 at transform time.
    """

    def __init__(self, cutoff: int | None = None):
        self.cutoff = cutoff

    def fit(self, X, y=None):
        as_image_batch(X, name="X")
        return self

    def transform(self, X) -> np.ndarray:
        return band_triplet_stack(X, cutoff=self.cutoff)
