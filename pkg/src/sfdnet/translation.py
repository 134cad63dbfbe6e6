"""Embedding translators, prototype memory, and nearest-class-mean classification.

When the extractor moves between tasks, stored prototypes go stale. Two small
residual translators bridge the gap without stored samples: one maps previous-
extractor embeddings forward, the other adjusts current-extractor embeddings,
and both are trained to agree on current-task data only. Translators start as
exact identities (zero-initialized residual) and are rebuilt at every task
transition.
"""

from __future__ import annotations

import json

import numpy as np
import torch
from torch import nn


class EmbeddingTranslator(nn.Module):
    """Residual two-layer MLP: translate(z) = z + W2 relu(W1 z + b1) + b2.

    The output layer is zero-initialized so a fresh translator is the identity.
    """

    def __init__(self, dim: int, hidden_dim: int | None = None, seed: int | None = None):
        super().__init__()
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        if hidden_dim is None:
            hidden_dim = dim
        self.dim = dim
        if seed is not None:
            torch.manual_seed(seed)
        self.hidden = nn.Linear(dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, dim)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.dim:
            raise ValueError(f"expected (B, {self.dim}) embeddings, got {tuple(z.shape)}")
        return z + self.out(torch.relu(self.hidden(z)))


def compensation_loss(translated_old: torch.Tensor, translated_current: torch.Tensor) -> torch.Tensor:
    """Mean over rows of the L1 distance between the two translated embeddings.

    Rows are samples during translator training and per-class prototypes in the
    written-out form, where dividing by the row count divides by the class count.
    """
    if translated_old.shape != translated_current.shape:
        raise ValueError("translated embedding shapes differ")
    if translated_old.ndim != 2:
        raise ValueError(f"expected 2D embeddings, got shape {tuple(translated_old.shape)}")
    return (translated_old - translated_current).abs().sum(dim=1).mean()


def class_mean_prototypes(embeddings, labels) -> dict:
    """Per-class mean embedding; returns {class_id: (dim,) float64 vector}."""
    emb = np.asarray(
        embeddings.detach().cpu().numpy() if isinstance(embeddings, torch.Tensor) else embeddings,
        dtype=np.float64,
    )
    lab = np.asarray(labels.detach().cpu().numpy() if isinstance(labels, torch.Tensor) else labels)
    if emb.ndim != 2:
        raise ValueError(f"embeddings must be 2D, got shape {emb.shape}")
    if lab.shape != (emb.shape[0],):
        raise ValueError(f"labels shape {lab.shape} does not match {emb.shape[0]} embeddings")
    if emb.shape[0] == 0:
        raise ValueError("cannot build prototypes from an empty batch")
    return {int(c): emb[lab == c].mean(axis=0) for c in np.unique(lab)}


class PrototypeMemory:
    """Class-id keyed store of prototype vectors with their source task.

    Vectors are float64 and ordered by ascending class id everywhere, which
    makes nearest-class-mean ties resolve to the smallest class id.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self._store = {}

    def __len__(self):
        return len(self._store)

    def __contains__(self, class_id):
        return int(class_id) in self._store

    @property
    def class_ids(self) -> list:
        return sorted(self._store)

    def set(self, class_id: int, vector, task_id: int):
        vec = np.asarray(
            vector.detach().cpu().numpy() if isinstance(vector, torch.Tensor) else vector,
            dtype=np.float64,
        ).reshape(-1)
        if vec.shape != (self.dim,):
            raise ValueError(f"prototype must have dim {self.dim}, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("prototype contains non-finite values")
        self._store[int(class_id)] = (vec, int(task_id))

    def get(self, class_id: int) -> np.ndarray:
        return self._store[int(class_id)][0]

    def task_of(self, class_id: int) -> int:
        return self._store[int(class_id)][1]

    def vectors(self) -> np.ndarray:
        """(n_classes, dim) matrix in ascending class-id order."""
        if not self._store:
            raise RuntimeError("prototype memory is empty")
        return np.stack([self._store[c][0] for c in self.class_ids])

    def map_vectors(self, fn):
        """Replace every prototype with fn applied to the stacked matrix."""
        ids = self.class_ids
        if not ids:
            raise RuntimeError("prototype memory is empty")
        out = np.asarray(fn(self.vectors()), dtype=np.float64)
        if out.shape != (len(ids), self.dim):
            raise ValueError(f"mapped prototypes have shape {out.shape}")
        for c, vec in zip(ids, out):
            self._store[c] = (vec, self._store[c][1])

    def save(self, path):
        ids = self.class_ids
        header = {
            "format": "sfdnet-prototypes",
            "version": 1,
            "dim": self.dim,
            "class_ids": ids,
            "task_ids": [self._store[c][1] for c in ids],
        }
        arrays = {"header": np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)}
        if ids:
            arrays["vectors"] = np.stack([self._store[c][0] for c in ids])
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "PrototypeMemory":
        with np.load(path) as data:
            if "header" not in data:
                raise ValueError(f"{path} is not a prototype file (missing header)")
            header = json.loads(bytes(data["header"]).decode("utf-8"))
            if header.get("format") != "sfdnet-prototypes":
                raise ValueError(f"unrecognized prototype format {header.get('format')!r}")
            memory = cls(int(header["dim"]))
            if header["class_ids"]:
                vectors = data["vectors"]
                for c, t, vec in zip(header["class_ids"], header["task_ids"], vectors):
                    memory.set(c, vec, t)
        return memory


def ncm_classify(queries, memory: PrototypeMemory) -> np.ndarray:
    """Nearest-class-mean labels under Euclidean distance.

    Distances are computed in float64; ties go to the smallest class id because
    prototypes are scanned in ascending id order with a strict improvement rule.
    """
    if len(memory) == 0:
        raise RuntimeError("prototype memory is empty")
    q = np.asarray(
        queries.detach().cpu().numpy() if isinstance(queries, torch.Tensor) else queries,
        dtype=np.float64,
    )
    if q.ndim != 2 or q.shape[1] != memory.dim:
        raise ValueError(f"queries must have shape (N, {memory.dim}), got {q.shape}")
    protos = memory.vectors()
    sq = ((q[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
    ids = np.asarray(memory.class_ids)
    return ids[np.argmin(sq, axis=1)]
