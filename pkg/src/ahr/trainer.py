"""Task-by-task learner: centroid placement, replay training, memory refresh, classification."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .cce import CentroidSet, RFAConfig, place_task_centroids
from .hae import (
    DistillSettings,
    HAEModel,
    build_hae,
    composite_loss,
    decode,
    encode,
    load_model,
    save_model,
)
from .memory import INPUT, LATENT, LatentMemory, populate, sample_replay_batch
from .numeric import AdamState, NonFiniteError, adam_step, as_matrix

log = logging.getLogger(__name__)

ABLATIONS = ("standard", "lossless", "lossless_mini", "lossy_mini")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    minibatch_size: int = 128
    lr: float = 0.001
    lam: float = 1.0
    budget: int = 8000
    seed: int = 0
    ablation: str = "standard"
    hidden: tuple = (400, 400)
    latent_dim: int = 20
    distill_squared: bool = True
    distill_weight: float = 1.0
    rfa: RFAConfig = RFAConfig()

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def distill(self) -> DistillSettings:
        return DistillSettings(self.distill_squared, self.distill_weight, self.distill_weight)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        if "rfa" in d and isinstance(d["rfa"], dict):
            d["rfa"] = RFAConfig(**d["rfa"])
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def memory_plan(cfg: TrainConfig, input_dim: int) -> tuple[str, int]:
    """(space, capacity) of the exemplar memory for the configured ablation.

    The "mini" variants get the entry count a raw-exemplar store would hold
    in the bytes of ``budget`` latents.
    """
    raw_count = cfg.budget * cfg.latent_dim // input_dim
    return {
        "standard": (LATENT, cfg.budget),
        "lossless": (INPUT, cfg.budget),
        "lossless_mini": (INPUT, raw_count),
        "lossy_mini": (LATENT, raw_count),
    }[cfg.ablation]


@dataclass
class TaskStats:
    task: int
    epoch_loss: list[float] = field(default_factory=list)
    samples_processed: int = 0
    steps: int = 0


@dataclass(eq=False)
class LearnerState:
    model: HAEModel
    centroids: CentroidSet
    memory: LatentMemory
    tasks_seen: int = 0
    history: list[TaskStats] = field(default_factory=list)

    @classmethod
    def initial(cls, cfg: TrainConfig, input_dim: int) -> "LearnerState":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
        model = build_hae(input_dim, list(cfg.hidden), cfg.latent_dim, rng)
        space, cap = memory_plan(cfg, input_dim)
        dim = cfg.latent_dim if space == LATENT else input_dim
        return cls(model, CentroidSet(), LatentMemory(cap, dim, space))

    def seen_labels(self) -> set[int]:
        return set(self.centroids.labels())


def split_sizes(size: int, ell: int) -> tuple[int, int]:
    """(new rows, replay rows) for a minibatch at task ``ell``; new share rounds half up."""
    if ell < 1:
        raise ValueError("task index starts at 1")
    new = min(size, int(np.floor(size / ell + 0.5)))
    return new, size - new


def build_minibatch(new_x, new_y, memory: LatentMemory, decoder: HAEModel | None, size: int,
                    ell: int, seed, decoded=None):
    """Mix new-task rows with decoded replay rows.

    Takes ``round(size / ell)`` rows from ``new_x`` (a seeded subset when more
    are supplied; all of them, with the replay share scaled down, when fewer
    are) and fills the rest from memory, class-balanced.
    Returns (x, labels, n_new).
    """
    new_x = as_matrix(new_x)
    new_y = np.asarray(new_y, dtype=np.int64)
    n_new, n_rep = split_sizes(size, ell)
    rng = np.random.default_rng(seed)
    if new_x.shape[0] > n_new:
        pick = np.sort(rng.choice(new_x.shape[0], n_new, replace=False))
        new_x, new_y = new_x[pick], new_y[pick]
    elif new_x.shape[0] < n_new and n_new > 0:
        n_rep = int(np.floor(new_x.shape[0] * n_rep / n_new + 0.5))
    if n_rep == 0 or ell == 1:
        return new_x, new_y, new_x.shape[0]
    if len(memory) == 0:
        raise ValueError(f"task {ell} needs replay rows but the memory is empty")
    rx, ry, _ = sample_replay_batch(memory, decoder, n_rep, rng.integers(2**63), decoded=decoded)
    return np.concatenate((new_x, rx)), np.concatenate((new_y, ry)), new_x.shape[0]


def train_on_task(model: HAEModel, old: HAEModel | None, x, y, memory: LatentMemory,
                  centroids: CentroidSet, cfg: TrainConfig, ell: int) -> tuple[HAEModel, TaskStats]:
    """Adam over the hybrid loss (+ distillation toward ``old`` when given).

    ``model`` is copied first, so neither it nor ``old`` is modified.
    One epoch is one pass over the new task's rows; replay rows are drawn
    fresh for every minibatch.
    """
    model = model.copy()
    stats = TaskStats(ell)
    x = as_matrix(x, model.input_dim)
    y = np.asarray(y, dtype=np.int64)
    cmap = centroids.by_label()
    opt = AdamState.zeros_like(model.params())
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, ell, 1]))
    n_new, _ = split_sizes(cfg.minibatch_size, ell)
    decoded = None
    if ell > 1 and memory.space == LATENT and len(memory):
        # old decoder is frozen for the whole task, so decode the memory once
        decoded = decode(old, memory.vectors)
    teacher = old if ell > 1 else None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(x.shape[0])
        losses = []
        for b, start in enumerate(range(0, x.shape[0], n_new)):
            idx = perm[start:start + n_new]
            bx, by, _ = build_minibatch(
                x[idx], y[idx], memory, old, cfg.minibatch_size, ell,
                np.random.SeedSequence([cfg.seed, ell, 2, epoch, b]), decoded=decoded,
            )
            targets = np.stack([cmap[int(l)] for l in by])
            loss, grads = composite_loss(model, bx, targets, cfg.lam, teacher, cfg.distill)
            if not np.isfinite(loss.total):
                raise NonFiniteError(f"non-finite loss at task {ell}, epoch {epoch}, batch {b}")
            adam_step(model.params(), grads, opt, cfg.lr)
            model.touch()
            losses.append(loss.total / bx.shape[0])
            stats.samples_processed += bx.shape[0]
            stats.steps += 1
        stats.epoch_loss.append(float(np.mean(losses)))
        log.debug("task %d epoch %d loss %.5f", ell, epoch + 1, stats.epoch_loss[-1])
    return model, stats


def candidate_pool(state: LearnerState, old: HAEModel | None, x, y, ell: int):
    """New-task rows plus every stored exemplar, the latter decoded by the old model."""
    xs, ys, ts = [as_matrix(x)], [np.asarray(y, dtype=np.int64)], [np.full(len(y), ell, dtype=np.int64)]
    mem = state.memory
    if len(mem):
        prior = mem.vectors if mem.space == INPUT else decode(old, mem.vectors)
        xs.append(prior)
        ys.append(mem.labels)
        ts.append(mem.tasks)
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ts)


def learn_task(state: LearnerState, x, y, cfg: TrainConfig, trajectory=None) -> LearnerState:
    """Place the new centroids, train, refresh the memory; returns the next state."""
    x = as_matrix(x, state.model.input_dim)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] == 0:
        raise ValueError("empty task")
    overlap = set(np.unique(y).tolist()) & state.seen_labels()
    if overlap:
        raise ValueError(f"classes {sorted(overlap)} were already learned in an earlier task")
    ell = state.tasks_seen + 1
    centroids = place_task_centroids(
        state.centroids, ell, encode(state.model, x), y, cfg.rfa,
        seed=int(np.random.SeedSequence([cfg.seed, ell, 3]).generate_state(1)[0]),
        trajectory=trajectory,
    )
    old = state.model if ell > 1 else None
    model, stats = train_on_task(state.model, old, x, y, state.memory, centroids, cfg, ell)
    px, py, pt = candidate_pool(state, old, x, y, ell)
    memory = populate(model, px, py, pt, centroids, state.memory.budget, state.memory.space)
    # the previous model goes out of scope here; only ``model`` is retained
    return LearnerState(model, centroids, memory, ell, state.history + [stats])


def classify(model: HAEModel, centroids: CentroidSet, x, backend=None):
    """Nearest centroid in latent space over every class seen, as (tasks, labels).

    Ties go to the lexicographically smallest (task, class).
    """
    if len(centroids) == 0:
        raise ValueError("no centroids to classify against")
    z = encode(model, x)
    idx = kernels.nearest(z, centroids.positions(), backend=backend)
    tasks = np.array([c.task for c in centroids.entries])
    labels = np.array([c.label for c in centroids.entries])
    return tasks[idx], labels[idx]


def save_checkpoint(state: LearnerState, cfg: TrainConfig, directory) -> Path:
    from .memory import save_memory

    d = Path(directory) / f"task_{state.tasks_seen:03d}"
    d.mkdir(parents=True, exist_ok=True)
    save_model(state.model, d / "model.bin")
    (d / "centroids.json").write_text(state.centroids.to_json())
    save_memory(state.memory, d / "memory.bin")
    manifest = {
        "version": 1,
        "tasks_seen": state.tasks_seen,
        "config_hash": cfg.digest(),
        "files": ["model.bin", "centroids.json", "memory.bin"],
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return d


def load_checkpoint(directory) -> LearnerState:
    from .memory import load_memory

    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    return LearnerState(
        load_model(d / "model.bin"),
        CentroidSet.from_json((d / "centroids.json").read_text()),
        load_memory(d / "memory.bin"),
        manifest["tasks_seen"],
    )
