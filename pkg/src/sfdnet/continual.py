"""Incremental-training protocol: per-task trainers, baseline regularizers,
importance estimation, drift compensation, and the experiment loop.

Method ids: "ft", "lwf", "ewc", "mas", "sdc" are embedding-network baselines
trained with the triplet metric loss on the spatial backbone alone; "sfdnet"
is the dual-path pipeline with alignment + translation, and "e-sfdnet" adds
the triplet loss to the pipeline objective on every task. Both pipeline
variants include the triplet term on the first task, which serves as the base
session that a pretrained extractor would otherwise provide. All batch losses
are means, so the regularizer weight is batch-size independent.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from .backbone import BackboneConfig, EmbeddingNet
from .data import TaskStream, augment_batch
from .freq import band_triplet_stack, default_cutoff
from .network import PipelineConfig, SpatialFrequencyNet
from .translation import (
    EmbeddingTranslator,
    PrototypeMemory,
    class_mean_prototypes,
    compensation_loss,
    ncm_classify,
)

log = logging.getLogger(__name__)

BASELINE_METHODS = ("ft", "lwf", "ewc", "mas", "sdc")
PIPELINE_METHODS = ("sfdnet", "e-sfdnet")
METHODS = BASELINE_METHODS + PIPELINE_METHODS

REGULARIZED = ("lwf", "ewc", "mas")


@dataclass
class MethodConfig:
    method: str = "sfdnet"
    regularizer_weight: float = 1.0
    margin: float = 1.0
    sdc_bandwidth: float = 0.3

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.regularizer_weight < 0:
            raise ValueError("regularizer_weight must be non-negative")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.sdc_bandwidth <= 0:
            raise ValueError("sdc_bandwidth must be positive")


@dataclass
class TrainingConfig:
    epochs: int = 15
    # first-task override; the base session plays the role of pretraining, so
    # it usually gets more epochs than the incremental steps
    base_epochs: int | None = None
    batch_size: int = 32
    learning_rate: float = 1e-3
    backbone_learning_rate: float = 1e-4
    translator_epochs: int = 20
    translator_learning_rate: float = 1e-3
    importance_samples: int = 64
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "translator_epochs", "importance_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.base_epochs is not None and self.base_epochs < 1:
            raise ValueError("base_epochs must be positive when set")
        for name in ("learning_rate", "backbone_learning_rate", "translator_learning_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def task_epochs(self, first_task: bool) -> int:
        if first_task and self.base_epochs is not None:
            return self.base_epochs
        return self.epochs


@dataclass
class ImportanceMap:
    """Per-parameter non-negative weights; kind is 'fisher' or 'mas'."""

    values: dict
    kind: str

    def __post_init__(self):
        if self.kind not in ("fisher", "mas"):
            raise ValueError(f"kind must be fisher or mas, got {self.kind!r}")
        for name, tensor in self.values.items():
            if torch.any(tensor < 0):
                raise ValueError(f"importance for {name} has negative entries")


def _scalar(value) -> float:
    return float(value.detach()) if isinstance(value, torch.Tensor) else float(value)


def total_loss(cada, compensation):
    """Pipeline objective: alignment total plus compensation."""
    out = cada + compensation
    if not np.isfinite(_scalar(out)):
        raise RuntimeError(
            f"non-finite total loss: cada={_scalar(cada)}, compensation={_scalar(compensation)}"
        )
    return out


def lwf_loss(current: torch.Tensor, previous: torch.Tensor) -> torch.Tensor:
    """Batch mean of the Euclidean norm between current and previous embeddings."""
    if current.shape != previous.shape:
        raise ValueError(f"shape mismatch: {tuple(current.shape)} vs {tuple(previous.shape)}")
    if current.ndim != 2:
        raise ValueError(f"expected 2D embedding batches, got shape {tuple(current.shape)}")
    # tiny eps keeps the sqrt gradient finite when the embeddings coincide
    return ((current - previous).pow(2).sum(dim=1) + 1e-12).sqrt().mean()


def _quadratic_penalty(params_current: dict, params_previous: dict,
                       importance: ImportanceMap, expected_kind: str):
    if importance.kind != expected_kind:
        raise ValueError(f"importance kind {importance.kind!r}, expected {expected_kind!r}")
    total = None
    for name, cur in params_current.items():
        if name not in params_previous or name not in importance.values:
            raise ValueError(f"parameter {name!r} missing from previous state or importance")
        prev = params_previous[name]
        weight = importance.values[name]
        if cur.shape != prev.shape or cur.shape != weight.shape:
            raise ValueError(f"shape mismatch for parameter {name!r}")
        term = (0.5 * weight * (cur - prev.detach()).pow(2)).sum()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no parameters to penalize")
    return total


def ewc_loss(params_current: dict, params_previous: dict, fisher: ImportanceMap):
    """Sum over parameters of 0.5 * F * (theta - theta_prev)^2."""
    return _quadratic_penalty(params_current, params_previous, fisher, "fisher")


def mas_loss(params_current: dict, params_previous: dict, omega: ImportanceMap):
    """Sum over parameters of 0.5 * Omega * (theta - theta_prev)^2."""
    return _quadratic_penalty(params_current, params_previous, omega, "mas")


def estimate_fisher(model: torch.nn.Module, batches, objective) -> ImportanceMap:
    """Diagonal Fisher proxy: mean over batches of squared objective gradients.

    `objective(model, batch)` must return a scalar loss; parameters a batch does
    not touch contribute zero for that batch.
    """
    params = dict(model.named_parameters())
    acc = {name: torch.zeros_like(p) for name, p in params.items()}
    count = 0
    for batch in batches:
        model.zero_grad(set_to_none=True)
        loss = objective(model, batch)
        loss.backward()
        for name, p in params.items():
            if p.grad is not None:
                acc[name] += p.grad.detach().pow(2)
        count += 1
    model.zero_grad(set_to_none=True)
    if count == 0:
        raise ValueError("estimate_fisher needs at least one batch")
    return ImportanceMap({name: v / count for name, v in acc.items()}, "fisher")


def mas_importance(model: torch.nn.Module, batches, output_fn) -> ImportanceMap:
    """Mean over samples of |d ||output||_2^2 / d theta|.

    `output_fn(model, batch)` returns a (B, D) output; the gradient is taken per
    sample, so the absolute value is applied before averaging.
    """
    params = dict(model.named_parameters())
    acc = {name: torch.zeros_like(p) for name, p in params.items()}
    count = 0
    for batch in batches:
        output = output_fn(model, batch)
        if output.ndim == 1:
            output = output[:, None]
        for i in range(output.shape[0]):
            model.zero_grad(set_to_none=True)
            magnitude = output[i].pow(2).sum()
            magnitude.backward(retain_graph=i < output.shape[0] - 1)
            for name, p in params.items():
                if p.grad is not None:
                    acc[name] += p.grad.detach().abs()
            count += 1
    model.zero_grad(set_to_none=True)
    if count == 0:
        raise ValueError("mas_importance needs at least one sample")
    return ImportanceMap({name: v / count for name, v in acc.items()}, "mas")


def triplet_loss(anchor: torch.Tensor, positive: torch.Tensor, negative: torch.Tensor,
                 margin: float = 1.0) -> torch.Tensor:
    """Batch mean of max(0, d(a, p) - d(a, n) + margin) with Euclidean d."""
    if not anchor.shape == positive.shape == negative.shape:
        raise ValueError("anchor/positive/negative shapes differ")
    d_pos = ((anchor - positive).pow(2).sum(dim=-1) + 1e-12).sqrt()
    d_neg = ((anchor - negative).pow(2).sum(dim=-1) + 1e-12).sqrt()
    return torch.clamp(d_pos - d_neg + margin, min=0.0).mean()


def combined_loss(metric_loss, reg_loss, config: MethodConfig):
    """Metric loss plus regularizer_weight times the method's penalty."""
    if config.method not in REGULARIZED:
        raise ValueError(
            f"combined loss applies to {REGULARIZED}, got method {config.method!r}"
        )
    return metric_loss + config.regularizer_weight * reg_loss


def sdc_drift_compensation(prototypes: np.ndarray, before: np.ndarray, after: np.ndarray,
                           bandwidth: float = 0.3) -> np.ndarray:
    """Shift prototypes by a Gaussian-kernel weighted mean of feature drifts.

    Kernel weights come from distances between direction-normalized features and
    prototypes (bandwidth is scale-free); the drift itself is applied in the raw
    space. Falls back to the unweighted mean drift if all weights underflow.
    """
    prototypes = np.asarray(prototypes, dtype=np.float64)
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.size == 0:
        raise ValueError("drift compensation needs a non-empty feature set")
    if before.shape != after.shape or prototypes.ndim != 2 or before.ndim != 2:
        raise ValueError("prototypes and before/after features must be 2D with equal shapes")
    if prototypes.shape[1] != before.shape[1]:
        raise ValueError("feature dim does not match prototype dim")

    def normalize(x):
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        return x / np.maximum(norms, 1e-12)

    drift = after - before
    nb = normalize(before)
    np_ = normalize(prototypes)
    sq = ((np_[:, None, :] - nb[None, :, :]) ** 2).sum(axis=2)
    weights = np.exp(-sq / (2.0 * bandwidth ** 2))
    sums = weights.sum(axis=1, keepdims=True)
    mean_drift = drift.mean(axis=0, keepdims=True)
    shifted = np.where(sums > 1e-30, (weights @ drift) / np.maximum(sums, 1e-30), mean_drift)
    return prototypes + shifted


def _iter_batches(count: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        chunk = order[start:start + batch_size]
        if chunk.size:
            yield chunk


def _triplet_indices(labels: np.ndarray, anchors: np.ndarray, rng: np.random.Generator):
    """Positives share the anchor's class, negatives differ; needs >= 2 classes."""
    by_class = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    classes = np.asarray(sorted(by_class))
    if classes.size < 2:
        raise ValueError("triplet sampling needs at least two classes in the task")
    pos = np.empty_like(anchors)
    neg = np.empty_like(anchors)
    for i, a in enumerate(anchors):
        c = labels[a]
        members = by_class[c]
        pos[i] = members[rng.integers(members.size)] if members.size == 1 else rng.choice(
            members[members != a]
        )
        other = classes[classes != c]
        neg[i] = rng.choice(by_class[other[rng.integers(other.size)]])
    return pos, neg


class BaselineTrainer:
    """Spatial-backbone trainer for the ft/lwf/ewc/mas/sdc baselines."""

    def __init__(self, method: MethodConfig, training: TrainingConfig,
                 backbone: BackboneConfig):
        if method.method not in BASELINE_METHODS:
            raise ValueError(f"not a baseline method: {method.method!r}")
        self.method = method
        self.training = training
        torch.manual_seed(training.seed)
        self.net = EmbeddingNet(backbone)
        self.memory = PrototypeMemory(backbone.embedding_dim)
        self.rng = np.random.default_rng(training.seed)
        self.previous_net = None
        self.previous_params = None
        self.importance = None
        self.task_index = 0

    def _to_tensor(self, images: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))

    @torch.no_grad()
    def embed(self, images: np.ndarray, net=None) -> torch.Tensor:
        net = self.net if net is None else net
        was_training = net.training
        net.eval()
        out = []
        for start in range(0, images.shape[0], 256):
            out.append(net(self._to_tensor(images[start:start + 256])))
        net.train(was_training)
        return torch.cat(out) if out else torch.empty(0, self.memory.dim)

    def classify(self, images: np.ndarray) -> np.ndarray:
        return ncm_classify(self.embed(images).numpy(), self.memory)

    def _task_batch(self, images, labels, idx):
        batch = images[idx]
        if self.training.augment:
            batch = augment_batch(batch, self.rng)
        return self._to_tensor(batch), labels[idx]

    def train_task(self, images: np.ndarray, labels: np.ndarray):
        cfg = self.training
        method = self.method.method
        self.task_index += 1
        first_task = self.task_index == 1

        before = None
        if method == "sdc" and not first_task:
            before = self.embed(images, net=self.previous_net).double().numpy()

        optimizer = torch.optim.Adam(self.net.parameters(), lr=cfg.learning_rate)
        self.net.train()
        for epoch in range(cfg.task_epochs(first_task)):
            for idx in _iter_batches(images.shape[0], cfg.batch_size, self.rng):
                anchors = idx
                pos_idx, neg_idx = _triplet_indices(labels, anchors, self.rng)
                batch, _ = self._task_batch(images, labels, anchors)
                pos_batch, _ = self._task_batch(images, labels, pos_idx)
                neg_batch, _ = self._task_batch(images, labels, neg_idx)

                emb_a = self.net(batch)
                emb_p = self.net(pos_batch)
                emb_n = self.net(neg_batch)
                loss = triplet_loss(emb_a, emb_p, emb_n, self.method.margin)

                if method in REGULARIZED and not first_task:
                    if method == "lwf":
                        with torch.no_grad():
                            prev_emb = self.previous_net(batch)
                        reg = lwf_loss(emb_a, prev_emb)
                    else:
                        penalty = ewc_loss if method == "ewc" else mas_loss
                        reg = penalty(dict(self.net.named_parameters()),
                                      self.previous_params, self.importance)
                    loss = combined_loss(loss, reg, self.method)

                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss in {method} task {self.task_index} epoch {epoch}"
                    )
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
        self.net.eval()

        if method == "sdc" and not first_task and len(self.memory):
            after = self.embed(images).double().numpy()
            shifted = sdc_drift_compensation(self.memory.vectors(), before, after,
                                             self.method.sdc_bandwidth)
            self.memory.map_vectors(lambda _: shifted)

        for class_id, proto in class_mean_prototypes(self.embed(images), labels).items():
            self.memory.set(class_id, proto, self.task_index)

        if method in ("ewc", "mas"):
            self._estimate_importance(images, labels)
        if method in ("lwf", "sdc"):
            self.previous_net = copy.deepcopy(self.net).eval()
            for p in self.previous_net.parameters():
                p.requires_grad_(False)
        if method in ("ewc", "mas"):
            self.previous_params = {
                name: p.detach().clone() for name, p in self.net.named_parameters()
            }

    def _estimate_importance(self, images, labels):
        cfg = self.training
        take = min(cfg.importance_samples, images.shape[0])
        pick = self.rng.choice(images.shape[0], size=take, replace=False)
        if self.method.method == "ewc":
            batches = []
            for idx in _iter_batches(take, cfg.batch_size, self.rng):
                anchors = pick[idx]
                pos_idx, neg_idx = _triplet_indices(labels, anchors, self.rng)
                batches.append((self._to_tensor(images[anchors]),
                                self._to_tensor(images[pos_idx]),
                                self._to_tensor(images[neg_idx])))

            def objective(model, batch):
                a, p, n = batch
                return triplet_loss(model(a), model(p), model(n), self.method.margin)

            self.importance = estimate_fisher(self.net, batches, objective)
        else:
            batches = [self._to_tensor(images[pick])]
            self.importance = mas_importance(self.net, batches, lambda m, b: m(b))


class PipelineTrainer:
    """Dual-path trainer with alignment, compensation, and translated prototypes."""

    def __init__(self, method: MethodConfig, training: TrainingConfig,
                 pipeline: PipelineConfig):
        if method.method not in PIPELINE_METHODS:
            raise ValueError(f"not a pipeline method: {method.method!r}")
        self.method = method
        self.training = training
        self.pipeline = pipeline
        torch.manual_seed(training.seed)
        self.net = SpatialFrequencyNet(pipeline)
        self.memory = PrototypeMemory(pipeline.embedding_dim)
        self.rng = np.random.default_rng(training.seed)
        self.cutoff = (pipeline.cutoff if pipeline.cutoff is not None
                       else default_cutoff(pipeline.input_resolution))
        self.previous_net = None
        self.current_translator = None
        self.task_index = 0

    def _to_tensor(self, images: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))

    def _both_views(self, images: np.ndarray):
        stack = band_triplet_stack(images, self.cutoff).astype(np.float32)
        return self._to_tensor(images), self._to_tensor(stack)

    @torch.no_grad()
    def _raw_embed(self, images: np.ndarray, net=None) -> torch.Tensor:
        net = self.net if net is None else net
        was_training = net.training
        net.eval()
        out = []
        for start in range(0, images.shape[0], 256):
            spatial, stack = self._both_views(images[start:start + 256])
            out.append(net.embed(spatial, stack))
        net.train(was_training)
        return torch.cat(out) if out else torch.empty(0, self.memory.dim)

    @torch.no_grad()
    def embed(self, images: np.ndarray) -> torch.Tensor:
        """Evaluation embedding: current extractor, then the current translator."""
        fused = self._raw_embed(images)
        if self.current_translator is not None:
            fused = self.current_translator(fused)
        return fused

    def classify(self, images: np.ndarray) -> np.ndarray:
        return ncm_classify(self.embed(images).numpy(), self.memory)

    def train_task(self, images: np.ndarray, labels: np.ndarray):
        cfg = self.training
        self.task_index += 1
        first_task = self.task_index == 1
        # the previous transition's translators are discarded here
        self.current_translator = None
        # the first task doubles as the base session: a metric term makes the
        # randomly initialized extractor discriminative, standing in for the
        # pretrained backbone the full-scale setup assumes; afterwards only
        # e-sfdnet keeps it
        use_metric = first_task or self.method.method == "e-sfdnet"

        optimizer = torch.optim.Adam([
            {"params": list(self.net.backbone_parameters()),
             "lr": cfg.backbone_learning_rate},
            {"params": list(self.net.head_parameters()), "lr": cfg.learning_rate},
        ])
        self.net.train()
        for epoch in range(cfg.task_epochs(first_task)):
            for idx in _iter_batches(images.shape[0], cfg.batch_size, self.rng):
                batch_np = images[idx]
                if cfg.augment:
                    batch_np = augment_batch(batch_np, self.rng)
                spatial, stack = self._both_views(batch_np)

                align, fused = self.net.alignment_loss(spatial, stack)
                if first_task:
                    compensation = torch.zeros(())
                else:
                    with torch.no_grad():
                        prev_fused = self.previous_net.embed(spatial, stack)
                    compensation = compensation_loss(prev_fused, fused)
                loss = total_loss(align, compensation)

                if use_metric:
                    pos_idx, neg_idx = _triplet_indices(labels, idx, self.rng)
                    pos = self.net.embed(*self._both_views(images[pos_idx]))
                    neg = self.net.embed(*self._both_views(images[neg_idx]))
                    loss = loss + triplet_loss(fused, pos, neg, self.method.margin)

                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss in {self.method.method} task {self.task_index} "
                        f"epoch {epoch}"
                    )
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
        self.net.eval()

        old_translator = None
        if not first_task:
            old_translator = self._train_translators(images)

        for class_id, proto in class_mean_prototypes(self._raw_embed(images), labels).items():
            self.memory.set(class_id, proto, self.task_index)

        if not first_task:
            self._update_memory(old_translator, self.current_translator)

        self.previous_net = copy.deepcopy(self.net).eval()
        for p in self.previous_net.parameters():
            p.requires_grad_(False)

    def _train_translators(self, images: np.ndarray) -> EmbeddingTranslator:
        """Phase two: both extractors frozen, translators fit jointly."""
        cfg = self.training
        dim = self.pipeline.embedding_dim
        old_translator = EmbeddingTranslator(dim)
        current_translator = EmbeddingTranslator(dim)
        optimizer = torch.optim.Adam(
            list(old_translator.parameters()) + list(current_translator.parameters()),
            lr=cfg.translator_learning_rate,
        )
        previous_fused = self._raw_embed(images, net=self.previous_net)
        current_fused = self._raw_embed(images)
        for _ in range(cfg.translator_epochs):
            for idx in _iter_batches(images.shape[0], cfg.batch_size, self.rng):
                chunk = torch.from_numpy(idx)
                loss = compensation_loss(
                    old_translator(previous_fused[chunk]),
                    current_translator(current_fused[chunk]),
                )
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
        for p in old_translator.parameters():
            p.requires_grad_(False)
        for p in current_translator.parameters():
            p.requires_grad_(False)
        self.current_translator = current_translator.eval()
        return old_translator.eval()

    @torch.no_grad()
    def _update_memory(self, old_translator, current_translator):
        """Old-task prototypes through the old translator, current through the new."""
        current = self.task_index

        def mapper(matrix: np.ndarray) -> np.ndarray:
            tensors = torch.from_numpy(matrix.astype(np.float32))
            out = np.empty_like(matrix)
            for row, class_id in enumerate(self.memory.class_ids):
                translator = (current_translator if self.memory.task_of(class_id) == current
                              else old_translator)
                out[row] = translator(tensors[row:row + 1]).double().numpy()[0]
            return out

        self.memory.map_vectors(mapper)


def make_trainer(method: MethodConfig, training: TrainingConfig,
                 pipeline: PipelineConfig):
    if method.method in BASELINE_METHODS:
        backbone = BackboneConfig(
            input_channels=pipeline.input_channels,
            stage_channels=pipeline.stage_channels,
            input_resolution=pipeline.input_resolution,
        )
        return BaselineTrainer(method, training, backbone)
    return PipelineTrainer(method, training, pipeline)


def run_incremental(stream: TaskStream, method: MethodConfig,
                    training: TrainingConfig, pipeline: PipelineConfig) -> np.ndarray:
    """Train tasks in order and fill the lower-triangular accuracy matrix.

    Row n holds the accuracy on every seen task's test split after training task
    n; the stream's audit log receives a completion mark as soon as task n's
    training (including importance estimation and prototypes) is done.
    """
    trainer = make_trainer(method, training, pipeline)
    count = len(stream)
    matrix = np.full((count, count), np.nan)
    for t in range(count):
        start = time.perf_counter()
        train = stream.train_set(t)
        trainer.train_task(train.images, train.labels)
        stream.mark_complete(t)
        for j in range(t + 1):
            test = stream.test_set(j)
            predicted = trainer.classify(test.images)
            matrix[t, j] = float(np.mean(predicted == test.labels))
        log.info("%s task %d/%d done in %.1fs: row %s", method.method, t + 1, count,
                 time.perf_counter() - start,
                 np.array2string(matrix[t, :t + 1], precision=3))
    return matrix
