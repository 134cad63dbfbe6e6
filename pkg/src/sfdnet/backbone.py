"""Residual convolutional embedding networks and checkpoint IO.

Two structurally identical nets embed the spatial image and the stacked
frequency-band reconstructions; they share a config but never weights unless
explicitly requested. Checkpoints are .npz containers with a versioned JSON
header naming every tensor, so files stay readable without pickle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

CHECKPOINT_FORMAT = "sfdnet-checkpoint"
CHECKPOINT_VERSION = 1

SPATIAL = "spatial"
FREQUENCY = "frequency"
FUSED = "fused"


class TaggedEmbedding(NamedTuple):
    """Embedding batch plus the branch it came from (spatial/frequency/fused)."""

    data: torch.Tensor
    provenance: str


@dataclass
class BackboneConfig:
    input_channels: int = 1
    stage_channels: tuple = (16, 32, 64, 128)
    input_resolution: int = 32
    embedding_dim: int | None = None

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        if len(self.stage_channels) != 4 or any(c < 1 for c in self.stage_channels):
            raise ValueError(f"stage_channels needs 4 positive entries, got {self.stage_channels}")
        if self.input_channels < 1:
            raise ValueError(f"input_channels must be positive, got {self.input_channels}")
        # 4 stride-2 stages; the pre-pool map must keep at least 1 pixel
        if self.input_resolution < 16:
            raise ValueError(f"input_resolution must be >= 16, got {self.input_resolution}")
        if self.embedding_dim is None:
            self.embedding_dim = self.stage_channels[-1]
        elif self.embedding_dim != self.stage_channels[-1]:
            raise ValueError(
                f"embedding_dim {self.embedding_dim} must equal the last stage width "
                f"{self.stage_channels[-1]}"
            )

    @property
    def map_resolution(self) -> int:
        return self.input_resolution // 16


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.skip = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 1, stride=2, bias=False),
            nn.BatchNorm2d(out_channels),
        )

    def forward(self, x):
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + self.skip(x))


class EmbeddingNet(nn.Module):
    """Four stride-2 residual stages followed by global average pooling.

    A 32x32 input yields a (last_stage, 2, 2) pre-pool map. `seed` makes the
    fan-in scaled init reproducible.
    """

    def __init__(self, config: BackboneConfig, seed: int | None = None):
        super().__init__()
        self.config = config
        widths = config.stage_channels
        chain = [config.input_channels, *widths]
        self.stages = nn.Sequential(
            *[ResidualBlock(chain[i], chain[i + 1]) for i in range(4)]
        )
        if seed is not None:
            torch.manual_seed(seed)
        self.apply(_init_fan_in)

    def feature_map(self, batch: torch.Tensor) -> torch.Tensor:
        """Pre-pool feature map (B, embedding_dim, r, r)."""
        _check_batch(batch, self.config)
        return self.stages(batch)

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        """Pooled embedding (B, embedding_dim)."""
        return self.feature_map(batch).mean(dim=(2, 3))


def _init_fan_in(module):
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
    elif isinstance(module, nn.Linear):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def _check_batch(batch: torch.Tensor, config: BackboneConfig):
    if batch.ndim != 4:
        raise ValueError(f"batch must be 4D (B, C, H, W), got shape {tuple(batch.shape)}")
    b, c, h, w = batch.shape
    if c != config.input_channels:
        raise ValueError(f"expected {config.input_channels} input channels, got {c}")
    if h != config.input_resolution or w != config.input_resolution:
        raise ValueError(
            f"expected {config.input_resolution}x{config.input_resolution} input, got {h}x{w}"
        )


def embed_spatial(batch: torch.Tensor, net: EmbeddingNet) -> TaggedEmbedding:
    return TaggedEmbedding(net(batch), SPATIAL)


def embed_frequency(batch: torch.Tensor, net: EmbeddingNet) -> TaggedEmbedding:
    return TaggedEmbedding(net(batch), FREQUENCY)


def save_checkpoint(path, modules: dict, meta: dict | None = None):
    """Write named module state dicts to `path` as an .npz with a JSON header.

    Args:
        path: destination file.
        modules: mapping of module name -> nn.Module (or state-dict mapping).
        meta: optional JSON-serializable extras stored in the header.
    """
    arrays = {}
    names = []
    for mod_name, module in modules.items():
        state = module.state_dict() if isinstance(module, nn.Module) else module
        for key, tensor in state.items():
            full = f"{mod_name}.{key}"
            names.append(full)
            arrays[f"tensor:{full}"] = np.asarray(
                tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else tensor
            )
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "tensors": names,
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint; returns (tensors by full name, header meta).

    Raises ValueError on a missing/foreign header or unsupported version.
    """
    with np.load(path) as data:
        if "header" not in data:
            raise ValueError(f"{path} is not a checkpoint (missing header)")
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unrecognized checkpoint format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        tensors = {name: data[f"tensor:{name}"] for name in header["tensors"]}
    return tensors, header.get("meta", {})


def load_into(path, modules: dict):
    """Restore module state dicts saved by :func:`save_checkpoint`."""
    tensors, meta = load_checkpoint(path)
    for mod_name, module in modules.items():
        prefix = f"{mod_name}."
        state = {
            name[len(prefix):]: torch.from_numpy(np.array(arr))
            for name, arr in tensors.items()
            if name.startswith(prefix)
        }
        if not state:
            raise ValueError(f"checkpoint has no tensors for module {mod_name!r}")
        module.load_state_dict(state)
    return meta
