"""Exemplar-free class-incremental learning with spatial-frequency embeddings.

The package decomposes images into cosine-transform frequency bands, embeds the
spatial and frequency views through attention-gated backbones, aligns them with
cross-aligned variational codecs, and carries class prototypes across tasks
with zero-shot embedding translators. Baseline regularizers (fine-tuning,
embedding distillation, Fisher/importance penalties, drift compensation) share
the same protocol driver for comparison.
"""

from .attention import AttentionPair, FrequencyChannelGate, SqueezeExciteGate
from .backbone import BackboneConfig, EmbeddingNet, load_checkpoint, save_checkpoint
from .cada import AlignmentConfig, GaussianLatent, ModalityCodec, fuse
from .continual import (
    METHODS,
    ImportanceMap,
    MethodConfig,
    TrainingConfig,
    run_incremental,
)
from .data import DatasetSpec, LabeledImages, TaskStream, load_dataset, make_task_stream
from .estimator import ContinualImageClassifier
from .freq import FrequencyTripletTransformer, band_triplet_stack, dct2, idct2
from .harness import ExperimentConfig, RunRecord, emit_outputs, run_experiment
from .metrics import average_accuracy, average_forgetting
from .network import PipelineConfig, SpatialFrequencyNet
from .translation import EmbeddingTranslator, PrototypeMemory, ncm_classify

__version__ = "0.1.0"

__all__ = [
    "AlignmentConfig",
    "AttentionPair",
    "BackboneConfig",
    "ContinualImageClassifier",
    "DatasetSpec",
    "EmbeddingNet",
    "EmbeddingTranslator",
    "ExperimentConfig",
    "FrequencyChannelGate",
    "FrequencyTripletTransformer",
    "GaussianLatent",
    "ImportanceMap",
    "LabeledImages",
    "METHODS",
    "MethodConfig",
    "ModalityCodec",
    "PipelineConfig",
    "PrototypeMemory",
    "RunRecord",
    "SpatialFrequencyNet",
    "SqueezeExciteGate",
    "TaskStream",
    "TrainingConfig",
    "average_accuracy",
    "average_forgetting",
    "band_triplet_stack",
    "dct2",
    "emit_outputs",
    "fuse",
    "idct2",
    "load_checkpoint",
    "load_dataset",
    "make_task_stream",
    "ncm_classify",
    "run_experiment",
    "run_incremental",
    "save_checkpoint",
]
