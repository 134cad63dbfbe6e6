"""Dual-path embedding network: spatial branch + frequency-band branch.

Each path runs a residual backbone, applies the dual attention pair to its
pre-pool feature map, and emits an attended vector (mean of the two gated
branch vectors, keeping the backbone width). Three codec pairs align: the two
attention branches inside each path, and the two path features at the fusion
stage. The deterministic sample embedding is the concatenation of the two
fusion latent means, spatial first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .attention import AttentionPair, lowest_frequency_indices
from .backbone import FREQUENCY, SPATIAL, BackboneConfig, EmbeddingNet, TaggedEmbedding
from .cada import (
    AlignmentConfig,
    ModalityCodec,
    fuse,
    kl_to_standard_normal,
    reconstruction_loss,
    reparameterize,
    wasserstein_gaussian,
)


@dataclass
class PipelineConfig:
    """Architecture and loss weights for the dual-path network."""

    input_channels: int = 1
    input_resolution: int = 32
    stage_channels: tuple = (16, 32, 64, 128)
    cutoff: int | None = None
    frequency_count: int = 1
    reduction: int = 4
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    # True shares the three deeper backbone stages between the paths; the first
    # stage always stays separate because the input widths differ.
    share_backbones: bool = False
    # True reuses one codec pair for both attention alignments and the fusion.
    share_alignment_codecs: bool = False

    def __post_init__(self):
        if isinstance(self.alignment, dict):
            self.alignment = AlignmentConfig(**self.alignment)
        if self.frequency_count < 1:
            raise ValueError(f"frequency_count must be positive, got {self.frequency_count}")

    @property
    def embedding_dim(self) -> int:
        """Dimension of the fused deterministic embedding."""
        return 2 * self.alignment.latent_dim


def alignment_instance_loss(targets, codecs, noises, config: AlignmentConfig):
    """Full alignment objective for one modality pair, encoding each input once.

    Equals cada_total_loss(vae_loss, cross_alignment_loss,
    distribution_alignment_loss) for the same inputs and noises; the combined
    form avoids re-encoding and is verified against the composed route in tests.
    """
    if not (len(targets) == len(codecs) == len(noises)) or len(targets) < 2:
        raise ValueError("need matching targets/codecs/noises for >= 2 modalities")
    latents = [codec.encode(t) for t, codec in zip(targets, codecs)]

    total = None
    for target, codec, latent, noise in zip(targets, codecs, latents, noises):
        decoded = codec.decode(reparameterize(latent, noise))
        term = reconstruction_loss(target, decoded)
        term = term + config.kl_weight * kl_to_standard_normal(latent)
        total = term if total is None else total + term

    for j, (target, codec) in enumerate(zip(targets, codecs)):
        for i, latent in enumerate(latents):
            if i == j:
                continue
            cross = (target - codec.decode(latent.mean)).abs().sum(dim=1).mean()
            total = total + config.cross_weight * cross

    for i in range(len(latents)):
        for j in range(len(latents)):
            if i != j:
                total = total + config.align_weight * wasserstein_gaussian(
                    latents[i], latents[j]
                ).mean()

    if not torch.isfinite(total):
        raise RuntimeError(f"non-finite alignment loss: {float(total.detach())}")
    return total


class SpatialFrequencyNet(nn.Module):
    """Joint extractor over a spatial batch and its frequency-band triplet stack.

    forward/embed returns the deterministic fused embedding; training_loss adds
    the sampled-reconstruction objectives of all three alignment instances.
    """

    def __init__(self, config: PipelineConfig, seed: int | None = None):
        super().__init__()
        self.config = config
        if seed is not None:
            torch.manual_seed(seed)

        spatial_cfg = BackboneConfig(
            input_channels=config.input_channels,
            stage_channels=config.stage_channels,
            input_resolution=config.input_resolution,
        )
        frequency_cfg = BackboneConfig(
            input_channels=3 * config.input_channels,
            stage_channels=config.stage_channels,
            input_resolution=config.input_resolution,
        )
        self.spatial_net = EmbeddingNet(spatial_cfg)
        self.frequency_net = EmbeddingNet(frequency_cfg)
        if config.share_backbones:
            for idx in range(1, 4):
                self.frequency_net.stages[idx] = self.spatial_net.stages[idx]

        width = spatial_cfg.embedding_dim
        map_res = spatial_cfg.map_resolution
        indices = lowest_frequency_indices(config.frequency_count)
        for k, l in indices:
            if k >= map_res or l >= map_res:
                raise ValueError(
                    f"frequency_count {config.frequency_count} needs indices beyond the "
                    f"{map_res}x{map_res} feature map"
                )
        self.spatial_attention = AttentionPair(width, map_res, indices, config.reduction)
        self.frequency_attention = AttentionPair(width, map_res, indices, config.reduction)

        latent = config.alignment.latent_dim

        def codec_pair():
            return nn.ModuleList([ModalityCodec(width, latent), ModalityCodec(width, latent)])

        self.fusion_codecs = codec_pair()
        if config.share_alignment_codecs:
            self.spatial_branch_codecs = self.fusion_codecs
            self.frequency_branch_codecs = self.fusion_codecs
        else:
            self.spatial_branch_codecs = codec_pair()
            self.frequency_branch_codecs = codec_pair()

    def path_features(self, spatial_batch: torch.Tensor, frequency_batch: torch.Tensor):
        """Attended (B, width) vectors for the two paths."""
        s_map = self.spatial_net.feature_map(spatial_batch)
        f_map = self.frequency_net.feature_map(frequency_batch)
        return self.spatial_attention(s_map), self.frequency_attention(f_map)

    def embed(self, spatial_batch: torch.Tensor, frequency_batch: torch.Tensor) -> torch.Tensor:
        """Deterministic fused embedding: concat of the fusion latent means."""
        s_feat, f_feat = self.path_features(spatial_batch, frequency_batch)
        mu_s = self.fusion_codecs[0].encode(s_feat).mean
        mu_f = self.fusion_codecs[1].encode(f_feat).mean
        return fuse(TaggedEmbedding(mu_s, SPATIAL), TaggedEmbedding(mu_f, FREQUENCY)).data

    def forward(self, spatial_batch, frequency_batch):
        return self.embed(spatial_batch, frequency_batch)

    def alignment_loss(self, spatial_batch: torch.Tensor, frequency_batch: torch.Tensor):
        """Sum of the three alignment objectives plus the fused embedding.

        Returns (loss, fused embedding with gradients attached) so trainers can
        add compensation or metric terms without a second forward pass.
        """
        cfg = self.config.alignment
        s_map = self.spatial_net.feature_map(spatial_batch)
        f_map = self.frequency_net.feature_map(frequency_batch)

        se_s, fca_s = self.spatial_attention.branch_vectors(s_map)
        se_f, fca_f = self.frequency_attention.branch_vectors(f_map)
        s_feat = 0.5 * (se_s + fca_s)
        f_feat = 0.5 * (se_f + fca_f)

        def noises_for(*tensors):
            return [
                torch.randn(t.shape[0], cfg.latent_dim, device=t.device, dtype=t.dtype)
                for t in tensors
            ]

        loss = alignment_instance_loss(
            [se_s, fca_s], list(self.spatial_branch_codecs), noises_for(se_s, fca_s), cfg
        )
        loss = loss + alignment_instance_loss(
            [se_f, fca_f], list(self.frequency_branch_codecs), noises_for(se_f, fca_f), cfg
        )
        loss = loss + alignment_instance_loss(
            [s_feat, f_feat], list(self.fusion_codecs), noises_for(s_feat, f_feat), cfg
        )

        mu_s = self.fusion_codecs[0].encode(s_feat).mean
        mu_f = self.fusion_codecs[1].encode(f_feat).mean
        fused = fuse(TaggedEmbedding(mu_s, SPATIAL), TaggedEmbedding(mu_f, FREQUENCY)).data
        return loss, fused

    def backbone_parameters(self):
        seen = set()
        for net in (self.spatial_net, self.frequency_net):
            for p in net.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    yield p

    def head_parameters(self):
        backbone_ids = {id(p) for p in self.backbone_parameters()}
        for p in self.parameters():
            if id(p) not in backbone_ids:
                yield p
