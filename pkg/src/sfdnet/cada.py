"""Cross-aligned variational codecs for embedding fusion.

One codec per modality encodes an embedding into a diagonal Gaussian latent and
decodes latents back. Training couples the modalities three ways: per-modality
reconstruction with a KL pull toward the standard normal, cross-decoding of each
modality from the other's latent (L1), and a 2-Wasserstein match between the
latent Gaussians. The aligned representation of a modality is its latent mean;
fusion concatenates the spatial mean first, then the frequency mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import torch
from torch import nn

from .backbone import FREQUENCY, FUSED, SPATIAL, TaggedEmbedding

SIGMA_FLOOR = 1e-6


class GaussianLatent(NamedTuple):
    mean: torch.Tensor
    sigma: torch.Tensor


@dataclass
class AlignmentConfig:
    """Weights and sizes for the alignment objective.

    kl_weight scales the KL term inside each modality's VAE loss; cross_weight
    and align_weight scale the cross-decoding and latent-matching terms of the
    combined objective.
    """

    latent_dim: int = 64
    kl_weight: float = 1.0
    cross_weight: float = 1.0
    align_weight: float = 1.0
    hidden_dim: int | None = None

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be positive, got {self.latent_dim}")
        for name in ("kl_weight", "cross_weight", "align_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class ModalityCodec(nn.Module):
    """Encoder/decoder pair for one modality.

    The encoder body is Linear -> ReLU with separate heads for the latent mean
    and log standard deviation, so all-zero parameters give exactly the standard
    normal (mean 0, sigma 1). Sigma is floored at SIGMA_FLOOR.
    """

    def __init__(self, input_dim: int, latent_dim: int, hidden_dim: int | None = None,
                 seed: int | None = None):
        super().__init__()
        if input_dim < 1 or latent_dim < 1:
            raise ValueError(f"dims must be positive, got input {input_dim}, latent {latent_dim}")
        if hidden_dim is None:
            hidden_dim = input_dim
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        if seed is not None:
            torch.manual_seed(seed)
        self.body = nn.Sequential(nn.Linear(input_dim, hidden_dim), nn.ReLU(inplace=True))
        self.mean_head = nn.Linear(hidden_dim, latent_dim)
        self.log_sigma_head = nn.Linear(hidden_dim, latent_dim)
        self.decoder = nn.Sequential(
            nn.Linear(latent_dim, hidden_dim),
            nn.ReLU(inplace=True),
            nn.Linear(hidden_dim, input_dim),
        )

    def encode(self, x: torch.Tensor) -> GaussianLatent:
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected (B, {self.input_dim}) input, got {tuple(x.shape)}")
        h = self.body(x)
        sigma = torch.exp(self.log_sigma_head(h)).clamp(min=SIGMA_FLOOR)
        return GaussianLatent(self.mean_head(h), sigma)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"expected (B, {self.latent_dim}) latent, got {tuple(z.shape)}")
        return self.decoder(z)


def reparameterize(latent: GaussianLatent, noise: torch.Tensor) -> torch.Tensor:
    """mean + sigma * noise; `noise` must match the latent shape."""
    if noise.shape != latent.mean.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != latent shape {tuple(latent.mean.shape)}")
    return latent.mean + latent.sigma * noise


def kl_to_standard_normal(latent: GaussianLatent) -> torch.Tensor:
    """Mean over the batch of 0.5 * sum(mean^2 + sigma^2 - 1 - 2 log sigma)."""
    per_sample = 0.5 * (
        latent.mean.pow(2) + latent.sigma.pow(2) - 1.0 - 2.0 * torch.log(latent.sigma)
    ).sum(dim=1)
    return per_sample.mean()


def reconstruction_loss(target: torch.Tensor, decoded: torch.Tensor) -> torch.Tensor:
    """Squared error summed over dims, averaged over the batch."""
    if target.shape != decoded.shape:
        raise ValueError("target and decoded shapes differ")
    return (target - decoded).pow(2).sum(dim=1).mean()


def vae_loss(targets: Sequence[torch.Tensor], codecs: Sequence[ModalityCodec],
             noises: Sequence[torch.Tensor], kl_weight: float = 1.0) -> torch.Tensor:
    """Sum over modalities of (reconstruction from the sampled latent + kl_weight * KL).

    Written as a minimization objective; one reparameterization sample per step.
    """
    if not (len(targets) == len(codecs) == len(noises)) or len(targets) < 1:
        raise ValueError("need matching targets/codecs/noises for >= 1 modality")
    total = None
    for target, codec, noise in zip(targets, codecs, noises):
        latent = codec.encode(target)
        decoded = codec.decode(reparameterize(latent, noise))
        term = reconstruction_loss(target, decoded) + kl_weight * kl_to_standard_normal(latent)
        total = term if total is None else total + term
    if not torch.isfinite(total):
        raise RuntimeError(f"non-finite vae loss: {float(total.detach())}")
    return total


def cross_alignment_loss(targets: Sequence[torch.Tensor],
                         codecs: Sequence[ModalityCodec]) -> torch.Tensor:
    """Decode every modality from every other modality's latent mean.

    L1 summed over dims, averaged over the batch, summed over ordered pairs
    (i -> j, i != j). Cross-decoding uses the mean, not a sample, so the value
    is deterministic.
    """
    if len(targets) != len(codecs) or len(targets) < 2:
        raise ValueError("cross alignment needs >= 2 modalities with matching codecs")
    means = [codec.encode(target).mean for target, codec in zip(targets, codecs)]
    total = None
    for j, (target, codec) in enumerate(zip(targets, codecs)):
        for i, mean in enumerate(means):
            if i == j:
                continue
            term = (target - codec.decode(mean)).abs().sum(dim=1).mean()
            total = term if total is None else total + term
    return total


def wasserstein_gaussian(a: GaussianLatent, b: GaussianLatent) -> torch.Tensor:
    """Per-sample 2-Wasserstein distance between diagonal Gaussians.

    sqrt(||mean_a - mean_b||_2^2 + ||sigma_a - sigma_b||_2^2); symmetric and
    non-negative by construction.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("latent shapes differ")
    sq = (a.mean - b.mean).pow(2).sum(dim=1) + (a.sigma - b.sigma).pow(2).sum(dim=1)
    return torch.sqrt(sq.clamp(min=0.0))


def distribution_alignment_loss(latents: Sequence[GaussianLatent]) -> torch.Tensor:
    """Batch-mean Wasserstein distance summed over ordered modality pairs.

    The distance is symmetric, so each unordered pair contributes twice; kept in
    the ordered form to match the written double sum.
    """
    if len(latents) < 2:
        raise ValueError("need >= 2 modalities")
    total = None
    for i in range(len(latents)):
        for j in range(len(latents)):
            if i == j:
                continue
            term = wasserstein_gaussian(latents[i], latents[j]).mean()
            total = term if total is None else total + term
    return total


def cada_total_loss(vae_term, cross_term, align_term, config: AlignmentConfig):
    """vae + cross_weight * cross + align_weight * align."""
    return vae_term + config.cross_weight * cross_term + config.align_weight * align_term


def _branch_data(value, expect: str) -> torch.Tensor:
    if value is None:
        raise ValueError(f"missing {expect} branch")
    if isinstance(value, TaggedEmbedding):
        if value.provenance != expect:
            raise ValueError(f"expected {expect} provenance, got {value.provenance!r}")
        return value.data
    return value


def fuse(spatial, frequency) -> TaggedEmbedding:
    """Concatenate aligned embeddings, spatial block first.

    Accepts plain tensors or TaggedEmbeddings (whose provenance is checked);
    the result carries fused provenance.
    """
    s = _branch_data(spatial, SPATIAL)
    f = _branch_data(frequency, FREQUENCY)
    if s.ndim != 2 or f.ndim != 2 or s.shape[0] != f.shape[0]:
        raise ValueError(f"branch batches differ: {tuple(s.shape)} vs {tuple(f.shape)}")
    return TaggedEmbedding(torch.cat([s, f], dim=1), FUSED)
