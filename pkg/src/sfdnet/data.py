"""Dataset loading, synthetic texture generation, task streams, and the
exemplar-free access audit.

Every train/test read goes through TaskStream accessors, which append to an
AccessLog. After a task is marked complete, any further read of its train split
is a protocol violation; the audit makes the exemplar-free property checkable
instead of assumed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .freq import dct_basis

CIFAR_PIXELS = 3072  # 3 x 32 x 32, channel-planar

TRAIN = "train"
TEST = "test"


@dataclass
class LabeledImages:
    """(N, C, H, W) float32 images in [0, 1] with int64 labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim == 3:
            self.images = self.images[:, None, :, :]
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {self.images.shape[0]} images"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, mask) -> "LabeledImages":
        return LabeledImages(self.images[mask], self.labels[mask])

    @property
    def class_ids(self) -> np.ndarray:
        return np.unique(self.labels)


@dataclass
class DatasetSpec:
    """Source description: built-in synthetic generator or a file-backed set.

    name selects the loader: "synthetic", "cifar" (binary records), "image-dir"
    (one subdirectory per class), or "npz" (as written by save_npz_dataset).
    test_path, when given, supplies a canonical held-out split; otherwise tasks
    are split 80/20 per class.
    """

    name: str = "synthetic"
    path: str | None = None
    test_path: str | None = None
    resolution: int = 32
    classes: int = 10
    per_class: int = 50
    seed: int = 7
    channels: int = 1
    noise: float = 0.05
    label_bytes: int = 1

    def __post_init__(self):
        known = ("synthetic", "cifar", "image-dir", "npz")
        if self.name not in known:
            raise ValueError(f"dataset name must be one of {known}, got {self.name!r}")
        if self.resolution < 1 or self.classes < 1 or self.per_class < 1:
            raise ValueError("resolution, classes, and per_class must be positive")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.label_bytes not in (1, 2):
            raise ValueError(f"label_bytes must be 1 or 2, got {self.label_bytes}")


def synthetic_textures(classes: int, per_class: int, size: int, seed: int,
                       channels: int = 1, noise: float = 0.05) -> LabeledImages:
    """Class-conditioned frequency-patterned textures.

    Each class owns three disjoint cosine-basis components with fixed signed
    amplitudes; samples jitter the amplitudes and add pixel noise, so classes
    are separated by which frequencies carry energy. Deterministic under seed.
    """
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    rng = np.random.default_rng(seed)
    components_per_class = 3

    pool = [(k, l) for k in range(size) for l in range(size) if 2 <= k + l <= max(4, size // 2)]
    if len(pool) < classes * components_per_class:
        raise ValueError(f"{classes} classes need {classes * components_per_class} "
                         f"distinct components, pool has {len(pool)}")
    order = rng.permutation(len(pool))

    basis = dct_basis(size)
    images = np.empty((classes * per_class, channels, size, size), dtype=np.float32)
    labels = np.repeat(np.arange(classes), per_class).astype(np.int64)

    row = 0
    for c in range(classes):
        picks = [pool[order[c * components_per_class + i]] for i in range(components_per_class)]
        amps = rng.uniform(4.0, 8.0, size=components_per_class)
        signs = rng.choice([-1.0, 1.0], size=components_per_class)
        for _ in range(per_class):
            for ch in range(channels):
                spectrum = np.zeros((size, size))
                jitter = rng.normal(1.0, 0.15, size=components_per_class)
                for (k, l), amp, sign, jit in zip(picks, amps, signs, jitter):
                    spectrum[k, l] = sign * amp * jit
                plane = basis.T @ spectrum @ basis
                plane = 0.5 + plane / 4.0 + noise * rng.standard_normal((size, size))
                images[row, ch] = np.clip(plane, 0.0, 1.0)
            row += 1
    return LabeledImages(images, labels)


def load_cifar_binary(path, label_bytes: int = 1) -> LabeledImages:
    """Decode CIFAR-style binary records: label byte(s) then 3072 planar RGB bytes.

    With two label bytes the second (fine label) is used. Accepts one path or a
    list of paths whose records are concatenated in order.
    """
    paths = [path] if isinstance(path, (str, os.PathLike)) else list(path)
    record = label_bytes + CIFAR_PIXELS
    images, labels = [], []
    for p in paths:
        if not os.path.exists(p):
            raise FileNotFoundError(f"dataset file not found: {p}")
        raw = np.fromfile(p, dtype=np.uint8)
        if raw.size == 0 or raw.size % record != 0:
            raise OSError(f"corrupt CIFAR file {p}: {raw.size} bytes is not a "
                          f"multiple of the {record}-byte record")
        rows = raw.reshape(-1, record)
        labels.append(rows[:, label_bytes - 1].astype(np.int64))
        images.append(rows[:, label_bytes:].reshape(-1, 3, 32, 32))
    stacked = np.concatenate(images).astype(np.float32) / 255.0
    return LabeledImages(stacked, np.concatenate(labels))


def load_image_directory(root, resolution: int = 32) -> LabeledImages:
    """Load <root>/<class_name>/*.png|jpg|...; class ids follow sorted names."""
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset directory not found: {root}")
    class_dirs = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not class_dirs:
        raise OSError(f"dataset directory {root} has no class subdirectories")
    images, labels = [], []
    for class_id, name in enumerate(class_dirs):
        folder = os.path.join(root, name)
        files = sorted(os.listdir(folder))
        for fname in files:
            fpath = os.path.join(folder, fname)
            try:
                with Image.open(fpath) as img:
                    img = img.convert("RGB").resize((resolution, resolution), Image.BILINEAR)
                    arr = np.asarray(img, dtype=np.float32) / 255.0
            except (OSError, ValueError) as exc:
                raise OSError(f"unreadable image {fpath}: {exc}") from exc
            images.append(arr.transpose(2, 0, 1))
            labels.append(class_id)
    if not images:
        raise OSError(f"dataset directory {root} contains no images")
    return LabeledImages(np.stack(images), np.asarray(labels))


def save_npz_dataset(path, data: LabeledImages):
    with open(path, "wb") as fh:
        np.savez(fh, images=data.images, labels=data.labels)


def load_npz_dataset(path) -> LabeledImages:
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with np.load(path) as blob:
        if "images" not in blob or "labels" not in blob:
            raise OSError(f"corrupt dataset file {path}: missing images/labels arrays")
        return LabeledImages(blob["images"], blob["labels"])


def load_dataset(spec: DatasetSpec) -> tuple[LabeledImages, LabeledImages | None]:
    """Return (train, canonical test or None) per the spec."""
    if spec.name == "synthetic":
        data = synthetic_textures(spec.classes, spec.per_class, spec.resolution,
                                  spec.seed, spec.channels, spec.noise)
        return data, None
    if spec.path is None:
        raise ValueError(f"dataset {spec.name!r} requires a path")
    loaders = {
        "cifar": lambda p: load_cifar_binary(p, spec.label_bytes),
        "image-dir": lambda p: load_image_directory(p, spec.resolution),
        "npz": load_npz_dataset,
    }
    loader = loaders[spec.name]
    train = loader(spec.path)
    test = loader(spec.test_path) if spec.test_path else None
    return train, test


@dataclass(frozen=True)
class AccessRecord:
    sequence: int
    task_id: int
    split: str


class AccessLog:
    """Ordered record of every split read plus task-completion marks."""

    def __init__(self):
        self.records: list[AccessRecord] = []
        self._completed_at: dict[int, int] = {}

    def record(self, task_id: int, split: str):
        if split not in (TRAIN, TEST):
            raise ValueError(f"split must be train or test, got {split!r}")
        self.records.append(AccessRecord(len(self.records), task_id, split))

    def mark_complete(self, task_id: int):
        self._completed_at.setdefault(task_id, len(self.records))

    def completed(self, task_id: int) -> bool:
        return task_id in self._completed_at

    def violations(self) -> list:
        """Train-split reads of a task after that task was marked complete."""
        return [
            r for r in self.records
            if r.split == TRAIN and r.task_id in self._completed_at
            and r.sequence >= self._completed_at[r.task_id]
        ]

    def assert_exemplar_free(self):
        bad = self.violations()
        if bad:
            raise RuntimeError(f"exemplar-free violation: {bad[:5]} (total {len(bad)})")


class TaskStream:
    """Ordered tasks with disjoint class sets; all data reads are audited."""

    def __init__(self, tasks: list, log: AccessLog | None = None):
        seen: set = set()
        for train, test, class_ids in tasks:
            ids = set(int(c) for c in class_ids)
            if seen & ids:
                raise ValueError(f"task class sets overlap: {sorted(seen & ids)}")
            extra = set(int(c) for c in test.labels) - ids
            if extra:
                raise ValueError(f"test labels {sorted(extra)} outside the task's class set")
            seen |= ids
        self._tasks = tasks
        self.log = log if log is not None else AccessLog()

    def __len__(self):
        return len(self._tasks)

    def class_ids(self, task_id: int) -> list:
        return sorted(int(c) for c in self._tasks[task_id][2])

    def train_set(self, task_id: int) -> LabeledImages:
        self.log.record(task_id, TRAIN)
        return self._tasks[task_id][0]

    def test_set(self, task_id: int) -> LabeledImages:
        self.log.record(task_id, TEST)
        return self._tasks[task_id][1]

    def mark_complete(self, task_id: int):
        self.log.mark_complete(task_id)


def make_task_stream(train_data: LabeledImages, task_count: int, classes_per_task: int,
                     seed: int, test_data: LabeledImages | None = None,
                     train_fraction: float = 0.8) -> TaskStream:
    """Partition classes into disjoint ordered tasks, deterministically under seed.

    Classes are shuffled once and chunked. Without a canonical test set each
    class is split train_fraction/(1 - train_fraction) after a seeded shuffle.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    classes = np.unique(train_data.labels)
    needed = task_count * classes_per_task
    if task_count < 1 or classes_per_task < 1:
        raise ValueError("task_count and classes_per_task must be positive")
    if needed > classes.size:
        raise ValueError(f"{task_count} tasks x {classes_per_task} classes need "
                         f"{needed} classes, dataset has {classes.size}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(classes)

    tasks = []
    for t in range(task_count):
        ids = np.sort(order[t * classes_per_task:(t + 1) * classes_per_task])
        train_parts, test_parts = [], []
        for c in ids:
            if test_data is not None:
                train_parts.append(train_data.subset(train_data.labels == c))
                test_parts.append(test_data.subset(test_data.labels == c))
            else:
                members = np.flatnonzero(train_data.labels == c)
                members = members[rng.permutation(members.size)]
                n_train = max(1, int(round(members.size * train_fraction)))
                n_train = min(n_train, members.size - 1) if members.size > 1 else members.size
                train_parts.append(train_data.subset(members[:n_train]))
                test_parts.append(train_data.subset(members[n_train:]))
        train = LabeledImages(
            np.concatenate([p.images for p in train_parts]),
            np.concatenate([p.labels for p in train_parts]),
        )
        test = LabeledImages(
            np.concatenate([p.images for p in test_parts]),
            np.concatenate([p.labels for p in test_parts]),
        )
        tasks.append((train, test, [int(c) for c in ids]))
    return TaskStream(tasks)


def augment_batch(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Training-time random crop (zero padding) and horizontal flip, seeded."""
    n, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(images)
    tops = rng.integers(0, 2 * pad + 1, size=n)
    lefts = rng.integers(0, 2 * pad + 1, size=n)
    flips = rng.random(n) < 0.5
    for i in range(n):
        crop = padded[i, :, tops[i]:tops[i] + h, lefts[i]:lefts[i] + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out
