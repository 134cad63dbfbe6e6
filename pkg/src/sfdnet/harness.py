"""Experiment orchestration: YAML config, method runs, result files, plots.

A config describes one experiment: a dataset, a task protocol, model and
training settings, and a method list. Every method trains on identical task
splits (same seed); each produces an accuracy matrix plus derived series, all
persisted as comma-separated tables at full float precision so files round-trip
exactly and reruns are byte-identical.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from .cada import AlignmentConfig
from .continual import MethodConfig, TrainingConfig, run_incremental
from .data import DatasetSpec, load_dataset, make_task_stream
from .metrics import accuracy_series, as_accuracy_matrix, forgetting_series
from .network import PipelineConfig

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "SFDNET_OUT"


def _from_section(cls, section: dict, name: str):
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ValueError(f"config section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    return cls(**section)


@dataclass
class ModelSettings:
    """Architecture knobs; input channels/resolution follow the dataset."""

    stage_channels: tuple = (16, 32, 64, 128)
    cutoff: int | None = None
    frequency_count: int = 1
    reduction: int = 4
    latent_dim: int = 64
    kl_weight: float = 1.0
    cross_weight: float = 1.0
    align_weight: float = 1.0
    share_backbones: bool = False
    share_alignment_codecs: bool = False

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)

    def pipeline_config(self, input_channels: int, input_resolution: int) -> PipelineConfig:
        return PipelineConfig(
            input_channels=input_channels,
            input_resolution=input_resolution,
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
            share_backbones=self.share_backbones,
            share_alignment_codecs=self.share_alignment_codecs,
        )


@dataclass
class MethodSettings:
    regularizer_weight: float = 1.0
    margin: float = 1.0
    sdc_bandwidth: float = 0.3

    def for_method(self, method: str) -> MethodConfig:
        return MethodConfig(method=method, **dataclasses.asdict(self))


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    tasks: int = 5
    classes_per_task: int = 2
    methods: tuple = ("ft", "sfdnet")
    seed: int = 0
    train_fraction: float = 0.8
    out_dir: str = "runs"
    model: ModelSettings = field(default_factory=ModelSettings)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    method: MethodSettings = field(default_factory=MethodSettings)

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if not self.methods:
            raise ValueError("config needs at least one method")
        if self.tasks < 1 or self.classes_per_task < 1:
            raise ValueError("tasks and classes_per_task must be positive")
        for m in self.methods:
            MethodConfig(method=m)  # validates the id

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ValueError("config root must be a mapping")
        known = {"dataset", "protocol", "model", "training", "method", "output"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        protocol = raw.get("protocol") or {}
        if not isinstance(protocol, dict):
            raise ValueError("config section 'protocol' must be a mapping")
        allowed = {"tasks", "classes_per_task", "methods", "seed", "train_fraction"}
        unknown = set(protocol) - allowed
        if unknown:
            raise ValueError(f"unknown keys in config section 'protocol': {sorted(unknown)}")
        output = raw.get("output") or {}
        if not isinstance(output, dict) or set(output) - {"dir"}:
            raise ValueError("config section 'output' accepts only the key 'dir'")
        return cls(
            dataset=_from_section(DatasetSpec, raw.get("dataset"), "dataset"),
            model=_from_section(ModelSettings, raw.get("model"), "model"),
            training=_from_section(TrainingConfig, raw.get("training"), "training"),
            method=_from_section(MethodSettings, raw.get("method"), "method"),
            out_dir=output.get("dir", "runs"),
            **protocol,
        )

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                raw = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ValueError(f"config file {path} is not valid YAML: {exc}") from exc
        return cls.from_dict(raw or {})

    def to_dict(self) -> dict:
        return {
            "dataset": dataclasses.asdict(self.dataset),
            "protocol": {
                "tasks": self.tasks,
                "classes_per_task": self.classes_per_task,
                "methods": list(self.methods),
                "seed": self.seed,
                "train_fraction": self.train_fraction,
            },
            "model": {**dataclasses.asdict(self.model),
                      "stage_channels": list(self.model.stage_channels)},
            "training": dataclasses.asdict(self.training),
            "method": dataclasses.asdict(self.method),
            "output": {"dir": self.out_dir},
        }


@dataclass
class RunRecord:
    method: str
    matrix: np.ndarray
    accuracy: np.ndarray
    forgetting: np.ndarray
    seed: int
    duration_seconds: float
    config: dict


def run_experiment(config: ExperimentConfig):
    """Run every configured method on identical splits.

    Returns (records, failures): one RunRecord per method that finished, and a
    {method: error string} map for methods that aborted. Task splits and the
    exemplar-free audit are rebuilt per method from the same seed.
    """
    train, test = load_dataset(config.dataset)
    channels = train.images.shape[1]
    resolution = train.images.shape[2]
    pipeline = config.model.pipeline_config(channels, resolution)
    training = dataclasses.replace(config.training, seed=config.seed)

    records, failures = [], {}
    for name in config.methods:
        stream = make_task_stream(
            train, config.tasks, config.classes_per_task, config.seed,
            test_data=test, train_fraction=config.train_fraction,
        )
        started = time.perf_counter()
        try:
            matrix = run_incremental(stream, config.method.for_method(name),
                                     training, pipeline)
            stream.log.assert_exemplar_free()
        except Exception as exc:  # noqa: BLE001 - a failed method must not kill the rest
            log.error("method %s failed: %s", name, exc)
            failures[name] = f"{type(exc).__name__}: {exc}"
            continue
        records.append(RunRecord(
            method=name,
            matrix=matrix,
            accuracy=accuracy_series(matrix),
            forgetting=forgetting_series(matrix),
            seed=config.seed,
            duration_seconds=time.perf_counter() - started,
            config=config.to_dict(),
        ))
    return records, failures


def _format(value: float) -> str:
    return "" if np.isnan(value) else repr(float(value))


def write_matrix_csv(matrix: np.ndarray, path):
    """Header row of task ids, one row per training step, full float precision."""
    matrix = np.asarray(matrix, dtype=np.float64)
    count = matrix.shape[0]
    lines = ["after_task," + ",".join(str(j + 1) for j in range(count))]
    for k in range(count):
        lines.append(str(k + 1) + "," + ",".join(_format(v) for v in matrix[k]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(f"matrix file not found: {path}")
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or not lines[0].startswith("after_task,"):
        raise ValueError(f"{path} is not a matrix table (bad header)")
    count = len(lines[0].split(",")) - 1
    if len(lines) - 1 != count:
        raise ValueError(f"{path} has {len(lines) - 1} data rows, expected {count}")
    matrix = np.full((count, count), np.nan)
    for k, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != count + 1:
            raise ValueError(f"{path} row {k + 1} has {len(cells) - 1} cells")
        for j, cell in enumerate(cells[1:]):
            if cell:
                matrix[k, j] = float(cell)
    return as_accuracy_matrix(matrix)


def _write_series_csv(path, header: str, values: np.ndarray, first_k: int = 1):
    lines = [f"k,{header}"]
    for k, value in enumerate(values, start=1):
        if k >= first_k and not np.isnan(value):
            lines.append(f"{k},{repr(float(value))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_plot(path, xs, ys, ylabel: str, title: str):
    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel("tasks trained")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def emit_outputs(record: RunRecord, directory) -> list:
    """Write matrix/series tables, the config snapshot, and the two plots.

    Returns the list of file paths written, all under <directory>/<method>/.
    """
    target = os.path.join(directory, record.method)
    try:
        os.makedirs(target, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {target}: {exc}") from exc

    paths = []

    def out(name):
        paths.append(os.path.join(target, name))
        return paths[-1]

    write_matrix_csv(record.matrix, out("matrix.csv"))
    _write_series_csv(out("accuracy.csv"), "average_accuracy", record.accuracy)
    _write_series_csv(out("forgetting.csv"), "average_forgetting", record.forgetting,
                      first_k=2)
    with open(out("config.yaml"), "w") as fh:
        yaml.safe_dump(record.config, fh, sort_keys=True)

    count = record.matrix.shape[0]
    ks = np.arange(1, count + 1)
    _write_plot(out("accuracy.png"), ks, record.accuracy,
                "average accuracy", f"{record.method}: accuracy")
    if count > 1:
        _write_plot(out("forgetting.png"), ks[1:], record.forgetting[1:],
                    "average forgetting", f"{record.method}: forgetting")
    return paths
