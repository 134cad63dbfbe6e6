"""Channel attention gates: squeeze-excite and frequency-channel variants.

Both gates share the excitation shape reduce(C -> C/r) -> ReLU -> expand -> sigmoid,
so gate weights always lie strictly inside (0, 1) and zero excitation weights give
exactly 0.5 everywhere. They differ only in the squeeze: global average pooling
for the squeeze-excite gate, a per-channel cosine-basis projection for the
frequency gate. With the basis index (0, 0) for every channel the two squeezes
agree up to the constant sqrt(H*W), which makes the pair directly comparable.
"""

from __future__ import annotations

import torch
from torch import nn

from .freq import dct_basis


def lowest_frequency_indices(count: int) -> list:
    """First `count` (k, l) pairs ordered by k + l, then k; (0, 0) first."""
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    out = []
    total = 0
    while len(out) < count:
        for k in range(total + 1):
            out.append((k, total - k))
            if len(out) == count:
                break
        total += 1
    return out


class _Excitation(nn.Module):
    """Shared reduce/expand MLP; `reduction` must divide `channels`."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        if channels < 1:
            raise ValueError(f"channels must be positive, got {channels}")
        if reduction < 1 or channels % reduction != 0:
            raise ValueError(f"reduction {reduction} must divide channels {channels}")
        hidden = channels // reduction
        self.net = nn.Sequential(
            nn.Linear(channels, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, channels),
            nn.Sigmoid(),
        )

    def forward(self, squeezed: torch.Tensor) -> torch.Tensor:
        return self.net(squeezed)


class SqueezeExciteGate(nn.Module):
    """Channel gate driven by global average pooling.

    Accepts a (B, C, H, W) map or an already pooled (B, C) vector; the output is
    the input reweighted per channel.
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        self.channels = channels
        self.excite = _Excitation(channels, reduction)

    def gate_weights(self, x: torch.Tensor) -> torch.Tensor:
        squeezed = self._squeeze(x)
        return self.excite(squeezed)

    def _squeeze(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim == 4:
            squeezed = x.mean(dim=(2, 3))
        elif x.ndim == 2:
            squeezed = x
        else:
            raise ValueError(f"expected (B, C) or (B, C, H, W), got shape {tuple(x.shape)}")
        if squeezed.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {squeezed.shape[1]}")
        return squeezed

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        weights = self.gate_weights(x)
        if x.ndim == 4:
            weights = weights[:, :, None, None]
        return x * weights


class FrequencyChannelGate(nn.Module):
    """Channel gate whose squeeze projects each channel onto a cosine basis.

    Channels are split into one contiguous group per entry of
    `frequency_indices` (the last group absorbs any remainder); group g is
    projected onto the orthonormal 2D basis function of its (k, l) pair.
    """

    def __init__(
        self,
        channels: int,
        spatial_size,
        frequency_indices=None,
        reduction: int = 4,
    ):
        super().__init__()
        if isinstance(spatial_size, int):
            spatial_size = (spatial_size, spatial_size)
        height, width = spatial_size
        if height < 1 or width < 1:
            raise ValueError(f"spatial_size must be positive, got {spatial_size}")
        if frequency_indices is None:
            frequency_indices = [(0, 0)]
        frequency_indices = [tuple(int(v) for v in pair) for pair in frequency_indices]
        if not frequency_indices:
            raise ValueError("frequency_indices must be non-empty")
        if len(frequency_indices) > channels:
            raise ValueError(
                f"{len(frequency_indices)} frequency groups exceed {channels} channels"
            )
        for k, l in frequency_indices:
            if not (0 <= k < height and 0 <= l < width):
                raise ValueError(f"frequency index ({k}, {l}) outside {height}x{width} spectrum")

        self.channels = channels
        self.spatial_size = (height, width)
        self.frequency_indices = frequency_indices
        self.excite = _Excitation(channels, reduction)
        self.register_buffer("basis", self._build_basis(channels, height, width, frequency_indices))

    @staticmethod
    def _build_basis(channels, height, width, indices):
        row = torch.from_numpy(dct_basis(height).copy()).float()
        col = torch.from_numpy(dct_basis(width).copy()).float()
        group = channels // len(indices)
        basis = torch.empty(channels, height, width)
        for g, (k, l) in enumerate(indices):
            start = g * group
            stop = channels if g == len(indices) - 1 else start + group
            basis[start:stop] = torch.outer(row[k], col[l])
        return basis

    def squeeze(self, x: torch.Tensor) -> torch.Tensor:
        """Per-channel basis projection: sum over H, W of x * basis."""
        if x.ndim != 4:
            raise ValueError(f"expected (B, C, H, W), got shape {tuple(x.shape)}")
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        if tuple(x.shape[2:]) != self.spatial_size:
            raise ValueError(f"expected spatial size {self.spatial_size}, got {tuple(x.shape[2:])}")
        return (x * self.basis).sum(dim=(2, 3))

    def gate_weights(self, x: torch.Tensor) -> torch.Tensor:
        return self.excite(self.squeeze(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate_weights(x)[:, :, None, None]


class AttentionPair(nn.Module):
    """Dual attention over one backbone output.

    The squeeze-excite branch gates the pooled embedding; the frequency branch
    gates the pre-pool map and pools afterwards. Both branch vectors have the
    backbone's embedding width, and the attended feature is their mean, so no
    re-projection is needed.
    """

    def __init__(
        self,
        channels: int,
        spatial_size,
        frequency_indices=None,
        reduction: int = 4,
    ):
        super().__init__()
        self.se_gate = SqueezeExciteGate(channels, reduction=reduction)
        self.fca_gate = FrequencyChannelGate(
            channels, spatial_size, frequency_indices=frequency_indices, reduction=reduction
        )

    def branch_vectors(self, feature_map: torch.Tensor):
        """Return (se_vector, fca_vector), each (B, C)."""
        pooled = feature_map.mean(dim=(2, 3))
        se_vec = self.se_gate(pooled)
        fca_vec = self.fca_gate(feature_map).mean(dim=(2, 3))
        return se_vec, fca_vec

    def forward(self, feature_map: torch.Tensor) -> torch.Tensor:
        se_vec, fca_vec = self.branch_vectors(feature_map)
        return 0.5 * (se_vec + fca_vec)
