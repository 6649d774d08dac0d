"""Class-centroid placement by inverse-square repulsion between latent charges."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .numeric import as_matrix

log = logging.getLogger(__name__)


class CoincidentPointsError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, step: int, mover: int, bound: float):
        self.step = step
        self.mover = mover
        super().__init__(f"mover {mover} left the |p| <= {bound:g} box at step {step}")


@dataclass(frozen=True)
class RFAConfig:
    zeta: float = 1.0
    mass: float = 1.0
    dt: float = 0.01
    steps: int = 500
    damping: float = 0.9
    charge: float = 1.0
    bound: float = 1e6
    min_dist: float = 1e-9
    jitter: float = 1e-6

    def __post_init__(self):
        if not self.zeta > 0 or not self.mass > 0 or not self.dt > 0:
            raise ValueError("zeta, mass and dt must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class Centroid:
    task: int
    label: int
    position: np.ndarray
    frozen: bool = True


@dataclass
class CentroidSet:
    """All class centroids, kept sorted by (task, label)."""

    entries: list[Centroid] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def dim(self) -> int | None:
        return self.entries[0].position.shape[0] if self.entries else None

    def keys(self) -> list[tuple[int, int]]:
        return [(c.task, c.label) for c in self.entries]

    def labels(self) -> list[int]:
        return [c.label for c in self.entries]

    def positions(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 0))
        return np.stack([c.position for c in self.entries])

    def by_label(self) -> dict[int, np.ndarray]:
        return {c.label: c.position for c in self.entries}

    def add(self, task: int, label: int, position, frozen: bool = True) -> None:
        pos = np.array(position, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(pos)):
            raise ValueError("centroid position must be finite")
        if self.dim is not None and pos.shape[0] != self.dim:
            raise ValueError(f"centroid dimension {pos.shape[0]} != {self.dim}")
        if any(c.label == label for c in self.entries):
            raise ValueError(f"class {label} already has a centroid")
        pos.setflags(write=False)
        self.entries.append(Centroid(task, label, pos, frozen))
        self.entries.sort(key=lambda c: (c.task, c.label))

    def copy(self) -> "CentroidSet":
        return CentroidSet([Centroid(c.task, c.label, c.position, c.frozen) for c in self.entries])

    def to_json(self) -> str:
        rows = [
            {"task": c.task, "label": c.label, "frozen": c.frozen, "position": [float(v) for v in c.position]}
            for c in self.entries
        ]
        return json.dumps({"version": 1, "centroids": rows}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CentroidSet":
        doc = json.loads(text)
        out = cls()
        for row in doc["centroids"]:
            out.add(row["task"], row["label"], row["position"], row["frozen"])
        return out


def init_new_centroids(latents, labels) -> tuple[list[int], np.ndarray]:
    """One starting position per class: the mean of that class's encodings.

    ``latents`` are the task's samples already passed through the encoder.
    Returns (sorted class labels, positions).
    """
    z = as_matrix(latents, what="latents")
    labels = np.asarray(labels)
    if labels.shape[0] != z.shape[0]:
        raise ValueError("one label per latent row required")
    classes = sorted(int(c) for c in np.unique(labels))
    if not classes:
        raise ValueError("task has no samples")
    pos = np.stack([z[labels == c].mean(axis=0) for c in classes])
    return classes, pos


def pairwise_force(p_a, p_b, zeta: float) -> np.ndarray:
    """Force on ``p_a`` from ``p_b``: magnitude zeta/|d|^2 along d = p_a - p_b."""
    d = np.asarray(p_a, dtype=np.float64) - np.asarray(p_b, dtype=np.float64)
    r = np.sqrt(np.sum(d * d))
    if r == 0.0:
        raise CoincidentPointsError("force between coincident points is undefined")
    return zeta / (r * r) * (d / r)


def potential_energy(positions, charge: float = 1.0) -> float:
    """Coulomb energy: sum_k (q^2/2) sum_{k' != k} 1/|p_k' - p_k| (each pair counted twice)."""
    p = as_matrix(positions, what="positions") if len(positions) else np.zeros((0, 1))
    total = 0.0
    for k in range(p.shape[0]):
        for kk in range(p.shape[0]):
            if kk == k:
                continue
            r = np.sqrt(np.sum((p[kk] - p[k]) ** 2))
            if r == 0.0:
                raise CoincidentPointsError(f"centroids {k} and {kk} coincide")
            total += charge * charge / 2.0 / r
    return total


def rfa_simulate(new_positions, frozen_positions, cfg: RFAConfig = RFAConfig(), seed: int = 0,
                 trajectory: list | None = None, backend: str | None = None) -> np.ndarray:
    """Move the new centroids under repulsion from each other and from the frozen ones.

    Velocities start at zero; each step every mover's velocity is damped,
    kicked by the accumulated force, and its position advanced. All movers
    are updated from the same snapshot of positions. Frozen positions are
    never written.

    If ``trajectory`` is a list, a copy of the mover positions after every
    step is appended to it (and the initial state first).
    """
    pos = np.array(as_matrix(new_positions, what="new_positions"), dtype=np.float64, order="C")
    frozen = np.ascontiguousarray(frozen_positions, dtype=np.float64).reshape(-1, pos.shape[1])
    vel = np.zeros_like(pos)
    rng = np.random.default_rng(seed)
    if trajectory is not None:
        trajectory.append(pos.copy())
        # step one at a time so every state can be recorded
        step = 0
        while step < cfg.steps:
            status, t, idx = kernels.rfa_integrate(
                pos, vel, frozen, cfg.zeta, cfg.mass, cfg.dt, cfg.damping, step, step + 1,
                cfg.bound, cfg.min_dist, backend=backend,
            )
            if status == kernels.COINCIDENT:
                _jitter(pos, idx, cfg, rng, t)
                continue
            if status == kernels.DIVERGED:
                raise DivergenceError(t, idx, cfg.bound)
            step += 1
            trajectory.append(pos.copy())
        return pos
    step = 0
    while True:
        status, t, idx = kernels.rfa_integrate(
            pos, vel, frozen, cfg.zeta, cfg.mass, cfg.dt, cfg.damping, step, cfg.steps,
            cfg.bound, cfg.min_dist, backend=backend,
        )
        if status == kernels.OK:
            return pos
        if status == kernels.DIVERGED:
            raise DivergenceError(t, idx, cfg.bound)
        _jitter(pos, idx, cfg, rng, t)
        step = t


def _jitter(pos, idx, cfg, rng, step):
    v = rng.standard_normal(pos.shape[1])
    pos[idx] += cfg.jitter * v / np.linalg.norm(v)
    log.debug("jittered mover %d at step %d (coincident centroids)", idx, step)


def place_task_centroids(centroids: CentroidSet, task: int, latents, labels,
                         cfg: RFAConfig = RFAConfig(), seed: int = 0, trajectory=None) -> CentroidSet:
    """Initialise the task's centroids from class means, run the repulsion, freeze them.

    Returns a new CentroidSet; the existing entries are carried over untouched.
    """
    classes, start = init_new_centroids(latents, labels)
    frozen = centroids.positions() if len(centroids) else np.zeros((0, start.shape[1]))
    final = rfa_simulate(start, frozen, cfg, seed=seed, trajectory=trajectory)
    out = centroids.copy()
    for label, p in zip(classes, final):
        out.add(task, label, p, frozen=True)
    return out


def write_trajectory_csv(path, trajectory, task: int, labels) -> None:
    """CSV columns: step, task, class, dim_0 .. dim_{m-1}."""
    m = trajectory[0].shape[1]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "task", "class"] + [f"dim_{k}" for k in range(m)])
        for step, pos in enumerate(trajectory):
            for label, row in zip(labels, pos):
                w.writerow([step, task, label] + [repr(float(v)) for v in row])
