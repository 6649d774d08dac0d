"""Fixed-budget exemplar memory with loss-ranked selection."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cce import CentroidSet
from .hae import HAEModel, decode, encode
from .numeric import as_matrix

LATENT = "latent"
INPUT = "input"
FLOAT_BYTES = 8


class BudgetExceeded(RuntimeError):
    pass


@dataclass(eq=False)
class LatentMemory:
    """Stored exemplars, one row per entry.

    ``space`` is ``"latent"`` for encoder outputs (decoded before replay) or
    ``"input"`` for raw samples, which the lossless ablations keep.
    """

    budget: int
    dim: int
    space: str = LATENT
    vectors: np.ndarray = None
    tasks: np.ndarray = None
    labels: np.ndarray = None
    # index of each entry in the candidate pool it was selected from
    source_ids: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if self.space not in (LATENT, INPUT):
            raise ValueError(f"unknown memory space {self.space!r}")
        if self.vectors is None:
            self.vectors = np.zeros((0, self.dim))
            self.tasks = np.zeros(0, dtype=np.int64)
            self.labels = np.zeros(0, dtype=np.int64)
        if self.source_ids is None:
            self.source_ids = np.arange(len(self.labels), dtype=np.int64)
        self.check()

    def __len__(self):
        return self.vectors.shape[0]

    def check(self) -> None:
        if len(self) > self.budget:
            raise BudgetExceeded(f"{len(self)} entries stored, budget is {self.budget}")
        if self.vectors.shape[1] != self.dim:
            raise ValueError(f"vector width {self.vectors.shape[1]} != {self.dim}")

    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    def class_counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.labels, return_counts=True)
        return {int(l): int(c) for l, c in zip(labels, counts)}

    def rows_for(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == label)[0]


def per_class_quota(budget: int, classes_so_far: int) -> int:
    if classes_so_far < 1:
        raise ValueError("per-class quota needs at least one class")
    return budget // classes_so_far


def rank_select(losses: np.ndarray, labels: np.ndarray, classes, quota: int) -> np.ndarray:
    """Indices of the ``quota`` lowest-loss rows of each class, ties to the lower index.

    Output is grouped by class (in ``classes`` order), ascending loss within a class.
    """
    chosen = []
    for c in classes:
        idx = np.nonzero(labels == c)[0]
        if idx.size == 0:
            raise ValueError(f"class {c} has no candidates")
        order = np.argsort(losses[idx], kind="stable")
        chosen.append(idx[order[:quota]])
    return np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)


def populate(model: HAEModel, pool, labels, tasks, centroids: CentroidSet, budget: int,
             space: str = LATENT) -> LatentMemory:
    """Rebuild the memory from a candidate pool.

    Every candidate is encoded with ``model`` and scored by its squared
    distance to its class centroid; each class seen so far keeps its
    ``budget // n_classes`` best candidates. Latent memories store the
    encodings, input memories store the candidate rows themselves.
    """
    x = as_matrix(pool, model.input_dim, "pool")
    labels = np.asarray(labels, dtype=np.int64)
    tasks = np.asarray(tasks, dtype=np.int64)
    z = encode(model, x)
    cmap = centroids.by_label()
    missing = set(np.unique(labels).tolist()) - set(cmap)
    if missing:
        raise ValueError(f"no centroid for classes {sorted(missing)}")
    targets = np.stack([cmap[int(l)] for l in labels]) if len(labels) else np.zeros((0, model.latent_dim))
    losses = np.sum((z - targets) ** 2, axis=1)
    classes = centroids.labels()
    quota = per_class_quota(budget, len(classes))
    sel = rank_select(losses, labels, classes, quota)
    vecs = z[sel] if space == LATENT else x[sel]
    mem = LatentMemory(budget, vecs.shape[1], space, vecs, tasks[sel], labels[sel], sel)
    mem.check()
    return mem


def balanced_indices(memory: LatentMemory, count: int, seed) -> np.ndarray:
    """Pick ``count`` entry indices, round-robin over a seeded class order."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if len(memory) == 0:
        raise ValueError("cannot sample replay rows from an empty memory")
    rng = np.random.default_rng(seed)
    classes = memory.classes()
    order = [classes[i] for i in rng.permutation(len(classes))]
    pools = {c: memory.rows_for(c)[rng.permutation(len(memory.rows_for(c)))] for c in order}
    out = np.empty(count, dtype=np.int64)
    n = len(order)
    for i in range(count):
        rows = pools[order[i % n]]
        out[i] = rows[(i // n) % len(rows)]
    return out


def sample_replay_batch(memory: LatentMemory, decoder: HAEModel | None, count: int, seed,
                        decoded: np.ndarray | None = None):
    """Class-balanced replay rows as (inputs, labels, tasks).

    Latent entries are passed through ``decoder``; ``decoded`` may hold the
    whole memory already decoded by the same decoder, in which case rows are
    looked up instead of recomputed.
    """
    idx = balanced_indices(memory, count, seed)
    if memory.space == INPUT:
        rows = memory.vectors[idx]
    elif decoded is not None:
        rows = decoded[idx]
    else:
        if decoder is None:
            raise ValueError("a decoder is required to replay latent exemplars")
        rows = decode(decoder, memory.vectors[idx])
    return rows, memory.labels[idx], memory.tasks[idx]


@dataclass(frozen=True)
class FootprintReport:
    latent_bytes: int
    decoder_param_bytes: int
    equivalent_raw_bytes: int
    compression_ratio: float

    @property
    def total_bytes(self) -> int:
        return self.latent_bytes + self.decoder_param_bytes


def footprint_report(memory: LatentMemory, decoder: HAEModel, input_dim: int) -> FootprintReport:
    """Byte accounting for a memory: what is stored vs the same count kept raw."""
    count = len(memory)
    return FootprintReport(
        latent_bytes=count * memory.dim * FLOAT_BYTES,
        decoder_param_bytes=decoder.decoder.n_params() * FLOAT_BYTES,
        equivalent_raw_bytes=count * input_dim * FLOAT_BYTES,
        compression_ratio=input_dim / decoder.latent_dim,
    )


# ------------------------------------------------------------------ snapshots
#
#   b"AHRL" | u32 version | u8 space (0 latent, 1 input) | u32 dim | u64 count | u64 budget
#   count x ( i32 task | i32 class | f64[dim] vector )

MEMORY_MAGIC = b"AHRL"
MEMORY_VERSION = 1
_HEADER = struct.Struct("<4sIBIQQ")


def memory_to_bytes(mem: LatentMemory) -> bytes:
    rec = np.dtype([("task", "<i4"), ("label", "<i4"), ("z", "<f8", (mem.dim,))])
    arr = np.zeros(len(mem), dtype=rec)
    arr["task"] = mem.tasks
    arr["label"] = mem.labels
    arr["z"] = mem.vectors
    head = _HEADER.pack(MEMORY_MAGIC, MEMORY_VERSION, 0 if mem.space == LATENT else 1,
                        mem.dim, len(mem), mem.budget)
    return head + arr.tobytes()


def memory_from_bytes(buf: bytes) -> LatentMemory:
    if len(buf) < _HEADER.size:
        raise ValueError("truncated memory snapshot")
    magic, version, space, dim, count, budget = _HEADER.unpack_from(buf)
    if magic != MEMORY_MAGIC:
        raise ValueError("not a memory snapshot (bad magic)")
    if version != MEMORY_VERSION:
        raise ValueError(f"unsupported memory snapshot version {version}")
    rec = np.dtype([("task", "<i4"), ("label", "<i4"), ("z", "<f8", (dim,))])
    if len(buf) != _HEADER.size + count * rec.itemsize:
        raise ValueError("memory snapshot size does not match its header")
    arr = np.frombuffer(buf, dtype=rec, count=count, offset=_HEADER.size)
    return LatentMemory(
        int(budget), int(dim), LATENT if space == 0 else INPUT,
        np.array(arr["z"], dtype=np.float64).reshape(count, dim),
        arr["task"].astype(np.int64), arr["label"].astype(np.int64),
    )


def save_memory(mem: LatentMemory, path) -> None:
    Path(path).write_bytes(memory_to_bytes(mem))


def load_memory(path) -> LatentMemory:
    return memory_from_bytes(Path(path).read_bytes())
