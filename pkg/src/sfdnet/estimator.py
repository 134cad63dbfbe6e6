"""Scikit-learn estimator facade over the incremental trainers.

Each partial_fit call trains exactly one task whose classes must be new;
predict runs nearest-class-mean over all prototypes accumulated so far. fit
resets the model and trains the data as a single task.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .cada import AlignmentConfig
from .continual import METHODS, MethodConfig, TrainingConfig, make_trainer
from .network import PipelineConfig


class ContinualImageClassifier(ClassifierMixin, BaseEstimator):
    """Class-incremental image classifier with a prototype-based decision rule.

    Parameters mirror the experiment config; see the project README for the
    full schema. X is (n, H, W) or (n, C, H, W) float images with square
    spatial dims, values in [0, 1]; y holds integer class ids. Successive
    partial_fit calls must bring disjoint class sets.
    """

    def __init__(self, method: str = "sfdnet", epochs: int = 15,
                 base_epochs: int | None = None, batch_size: int = 32,
                 learning_rate: float = 1e-3, backbone_learning_rate: float = 1e-4,
                 translator_epochs: int = 20, translator_learning_rate: float = 1e-3,
                 importance_samples: int = 64, augment: bool = False,
                 stage_channels: tuple = (16, 32, 64, 128), cutoff: int | None = None,
                 frequency_count: int = 1, reduction: int = 4, latent_dim: int = 64,
                 kl_weight: float = 1.0, cross_weight: float = 1.0,
                 align_weight: float = 1.0, regularizer_weight: float = 1.0,
                 margin: float = 1.0, sdc_bandwidth: float = 0.3, seed: int = 0):
        self.method = method
        self.epochs = epochs
        self.base_epochs = base_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.backbone_learning_rate = backbone_learning_rate
        self.translator_epochs = translator_epochs
        self.translator_learning_rate = translator_learning_rate
        self.importance_samples = importance_samples
        self.augment = augment
        self.stage_channels = stage_channels
        self.cutoff = cutoff
        self.frequency_count = frequency_count
        self.reduction = reduction
        self.latent_dim = latent_dim
        self.kl_weight = kl_weight
        self.cross_weight = cross_weight
        self.align_weight = align_weight
        self.regularizer_weight = regularizer_weight
        self.margin = margin
        self.sdc_bandwidth = sdc_bandwidth
        self.seed = seed

    def _validate(self, X, y):
        X = check_array(X, allow_nd=True, dtype=np.float64)
        if X.ndim == 3:
            X = X[:, None, :, :]
        if X.ndim != 4:
            raise ValueError(f"X must be (n, H, W) or (n, C, H, W), got shape {X.shape}")
        if X.shape[2] != X.shape[3]:
            raise ValueError(f"images must be square, got {X.shape[2]}x{X.shape[3]}")
        y = column_or_1d(y, warn=False)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} samples but y has {y.shape[0]}")
        y = y.astype(np.int64)
        return X, y

    def _build_trainer(self, channels: int, resolution: int):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        pipeline = PipelineConfig(
            input_channels=channels,
            input_resolution=resolution,
            stage_channels=tuple(self.stage_channels),
            cutoff=self.cutoff,
            frequency_count=self.frequency_count,
            reduction=self.reduction,
            alignment=AlignmentConfig(
                latent_dim=self.latent_dim,
                kl_weight=self.kl_weight,
                cross_weight=self.cross_weight,
                align_weight=self.align_weight,
            ),
        )
        method = MethodConfig(
            method=self.method,
            regularizer_weight=self.regularizer_weight,
            margin=self.margin,
            sdc_bandwidth=self.sdc_bandwidth,
        )
        training = TrainingConfig(
            epochs=self.epochs,
            base_epochs=self.base_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            backbone_learning_rate=self.backbone_learning_rate,
            translator_epochs=self.translator_epochs,
            translator_learning_rate=self.translator_learning_rate,
            importance_samples=self.importance_samples,
            augment=self.augment,
            seed=self.seed,
        )
        return make_trainer(method, training, pipeline)

    def partial_fit(self, X, y, classes=None):
        """Train one task. `classes` is accepted for API compatibility only."""
        X, y = self._validate(X, y)
        first_call = not hasattr(self, "trainer_")
        if first_call:
            self.trainer_ = self._build_trainer(X.shape[1], X.shape[2])
            self.classes_ = np.array([], dtype=np.int64)
            self.n_tasks_seen_ = 0
            self.input_shape_ = X.shape[1:]
        elif X.shape[1:] != self.input_shape_:
            raise ValueError(
                f"input shape {X.shape[1:]} differs from the fitted shape {self.input_shape_}"
            )
        overlap = np.intersect1d(self.classes_, np.unique(y))
        if overlap.size:
            raise ValueError(f"classes {overlap.tolist()} were already trained; "
                             "each partial_fit call must bring new classes")
        if np.unique(y).size < 2:
            raise ValueError("each task needs at least two classes")
        self.trainer_.train_task(X.astype(np.float32), y)
        self.classes_ = np.union1d(self.classes_, y)
        self.n_tasks_seen_ += 1
        return self

    def fit(self, X, y):
        """Reset any incremental state and train the data as a single task."""
        for attr in ("trainer_", "classes_", "n_tasks_seen_", "input_shape_"):
            if hasattr(self, attr):
                delattr(self, attr)
        return self.partial_fit(X, y)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "trainer_")
        X = check_array(X, allow_nd=True, dtype=np.float64)
        if X.ndim == 3:
            X = X[:, None, :, :]
        if X.ndim != 4:
            raise ValueError(f"X must be (n, H, W) or (n, C, H, W), got shape {X.shape}")
        if X.shape[1:] != self.input_shape_:
            raise ValueError(
                f"input shape {X.shape[1:]} differs from the fitted shape {self.input_shape_}"
            )
        return self.trainer_.classify(X.astype(np.float32))
