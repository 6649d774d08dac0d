"""Datasets and class-incremental task streams."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "AHR_DATA_DIR"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"x {self.x.shape} and y {self.y.shape} disagree")

    def __len__(self):
        return self.y.shape[0]

    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.y))

    def subset(self, mask_or_idx) -> "Dataset":
        return Dataset(self.x[mask_or_idx], self.y[mask_or_idx])

    def only(self, classes) -> "Dataset":
        return self.subset(np.isin(self.y, list(classes)))


@dataclass
class Task:
    classes: list[int]
    train: Dataset
    test: Dataset


@dataclass
class TaskStream:
    tasks: list[Task]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        seen: set[int] = set()
        for i, t in enumerate(self.tasks, 1):
            if len(t.train) == 0:
                raise ValueError(f"task {i} has no training data")
            cs = set(t.classes)
            if cs & seen:
                raise ValueError(f"task {i} repeats classes {sorted(cs & seen)}")
            if set(t.train.classes()) - cs or set(t.test.classes()) - cs:
                raise ValueError(f"task {i} data contains classes outside {sorted(cs)}")
            seen |= cs

    def __len__(self):
        return len(self.tasks)

    @property
    def input_dim(self) -> int:
        return self.tasks[0].train.x.shape[1]

    @property
    def n_classes(self) -> int:
        return sum(len(t.classes) for t in self.tasks)

    def all_classes(self) -> list[int]:
        return [c for t in self.tasks for c in t.classes]


def _open(path):
    path = Path(path)
    if not path.exists() and not path.name.endswith(".gz") and path.with_name(path.name + ".gz").exists():
        path = path.with_name(path.name + ".gz")
    if path.name.endswith(".gz"):
        return gzip.open(path, "rb").read()
    return path.read_bytes()


def _parse_idx(buf: bytes, magic: int, name: str) -> np.ndarray:
    if len(buf) < 8:
        raise IdxFormatError(f"{name}: file too short for an IDX header")
    (got,) = struct.unpack_from(">I", buf, 0)
    if got != magic:
        raise IdxFormatError(f"{name}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(buf) < 4 + 4 * ndim:
        raise IdxFormatError(f"{name}: truncated dimension header")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    count = int(np.prod(dims))
    off = 4 + 4 * ndim
    if len(buf) - off != count:
        raise IdxFormatError(f"{name}: expected {count} data bytes, found {len(buf) - off}")
    return np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels are scaled to [0, 1]."""
    images = _parse_idx(_open(images_path), IMAGES_MAGIC, str(images_path))
    labels = _parse_idx(_open(labels_path), LABELS_MAGIC, str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images ``[count, rows, cols]`` and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, r, c = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, r, c) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def default_data_dir():
    d = os.environ.get(DATA_DIR_ENV)
    return Path(d) if d else None


def load_mnist(data_dir=None) -> tuple[Dataset, Dataset]:
    d = Path(data_dir) if data_dir else default_data_dir()
    if d is None:
        raise FileNotFoundError(f"no MNIST directory given and ${DATA_DIR_ENV} is unset")
    train = load_idx(d / MNIST_FILES["train_images"], d / MNIST_FILES["train_labels"])
    test = load_idx(d / MNIST_FILES["test_images"], d / MNIST_FILES["test_labels"])
    return train, test


def stratified_fraction(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Seeded per-class subsample keeping ``fraction`` of each class."""
    rng = np.random.default_rng(seed)
    keep = []
    for c in ds.classes():
        idx = np.nonzero(ds.y == c)[0]
        k = max(1, int(round(fraction * idx.size)))
        keep.append(np.sort(rng.choice(idx, k, replace=False)))
    return ds.subset(np.sort(np.concatenate(keep)))


def split_tasks(train: Dataset, T: int, C: int, shuffle_seed: int | None = None,
                test: Dataset | None = None, name: str = "dataset") -> TaskStream:
    """Assign classes to T tasks of C classes each, in label order unless shuffled."""
    classes = train.classes()
    if T < 1 or C < 1:
        raise ValueError("T and C must be positive")
    if len(classes) < T * C:
        raise ValueError(f"{len(classes)} classes available, {T}x{C} requested")
    if shuffle_seed is not None:
        classes = [classes[i] for i in np.random.default_rng(shuffle_seed).permutation(len(classes))]
    test = test if test is not None else Dataset(np.zeros((0, train.x.shape[1])), np.zeros(0))
    tasks = []
    for i in range(T):
        cs = classes[i * C:(i + 1) * C]
        tasks.append(Task(list(cs), train.only(cs), test.only(cs)))
    return TaskStream(tasks, {"dataset": name, "T": T, "C": C, "shuffle_seed": shuffle_seed})


def make_synthetic(seed: int, T: int, C: int, input_dim: int, samples_per_class: int,
                   cluster_sep: float, test_per_class: int | None = None) -> TaskStream:
    """Unit-variance Gaussian clusters whose centres are at least ``cluster_sep`` apart."""
    if T < 1 or C < 1 or input_dim < 1 or samples_per_class < 1 or cluster_sep <= 0:
        raise ValueError("invalid synthetic stream dimensions")
    test_per_class = samples_per_class if test_per_class is None else test_per_class
    rng = np.random.default_rng(seed)
    k = T * C
    centres: list[np.ndarray] = []
    scale = cluster_sep * max(1.0, (k / input_dim) ** 0.5)
    tries = 0
    while len(centres) < k:
        c = rng.normal(0.0, scale, input_dim)
        tries += 1
        if all(np.linalg.norm(c - o) >= cluster_sep for o in centres):
            centres.append(c)
        elif tries > 10000 * k:
            raise ValueError("could not place cluster centres at the requested separation")
    def draw(n):
        xs = np.concatenate([ctr + rng.standard_normal((n, input_dim)) for ctr in centres])
        ys = np.repeat(np.arange(k), n)
        return Dataset(xs, ys)
    train, test = draw(samples_per_class), draw(test_per_class)
    stream = split_tasks(train, T, C, test=test, name="synthetic")
    stream.provenance.update(seed=seed, input_dim=input_dim, cluster_sep=cluster_sep,
                             samples_per_class=samples_per_class, centres=np.array(centres))
    return stream


def nearest_centre_accuracy(stream: TaskStream) -> float:
    """Accuracy of labelling test points by the nearest true cluster centre."""
    centres = stream.provenance["centres"]
    xs = np.concatenate([t.test.x for t in stream.tasks])
    ys = np.concatenate([t.test.y for t in stream.tasks])
    d = ((xs[:, None, :] - centres[None]) ** 2).sum(-1)
    return float(np.mean(np.argmin(d, axis=1) == ys))
