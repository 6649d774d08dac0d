"""Run a strategy over a task stream and account for its memory and compute."""
from __future__ import annotations

import logging
import time

import numpy as np

from ..memory import FLOAT_BYTES, INPUT, LATENT, LatentMemory
from ..trainer import LearnerState, TrainConfig, classify, learn_task, memory_plan, save_checkpoint
from .baselines import make_classifier, select_raw_exemplars, train_classifier
from .data import TaskStream
from .report import RunReport

log = logging.getLogger(__name__)

AHR_STRATEGIES = {
    "AHR": "standard",
    "AHR-lossless": "lossless",
    "AHR-lossless-mini": "lossless_mini",
    "AHR-lossy-mini": "lossy_mini",
}
STRATEGIES = tuple(AHR_STRATEGIES) + ("FT", "FT-E", "Joint")
FTE_BUDGETS = ("bytes", "count", "raw")


class InvariantViolation(RuntimeError):
    pass


def decoder_param_count(cfg: TrainConfig, input_dim: int) -> int:
    sizes = [cfg.latent_dim, *reversed(cfg.hidden), input_dim]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def fte_capacity(cfg: TrainConfig, input_dim: int, mode: str = "bytes") -> int:
    """Raw-exemplar count for FT-E.

    ``bytes``: whatever fits in the bytes AHR spends on latents plus decoder;
    ``count``: the same number of entries as AHR's latent budget;
    ``raw``: the same bytes as AHR's latents alone.
    """
    if mode == "bytes":
        ahr_bytes = (cfg.budget * cfg.latent_dim + decoder_param_count(cfg, input_dim)) * FLOAT_BYTES
        return ahr_bytes // (input_dim * FLOAT_BYTES)
    if mode == "count":
        return cfg.budget
    if mode == "raw":
        return cfg.budget * cfg.latent_dim // input_dim
    raise ValueError(f"fte budget mode must be one of {FTE_BUDGETS}")


def _evaluate(predict_fn, stream: TaskStream, upto: int):
    row, correct, total = [], 0, 0
    for t in stream.tasks[:upto]:
        if len(t.test) == 0:
            row.append(0.0)
            continue
        hit = int(np.sum(predict_fn(t.test.x) == t.test.y))
        row.append(hit / len(t.test))
        correct += hit
        total += len(t.test)
    return row, (correct / total if total else 0.0)


def _check_memory(mem: LatentMemory, ell: int):
    if len(mem) > mem.budget:
        raise InvariantViolation(f"memory holds {len(mem)} > {mem.budget} entries after task {ell}")


def run_strategy(strategy: str, stream: TaskStream, cfg: TrainConfig, fte_budget: str = "bytes",
                 checkpoint_dir=None) -> RunReport:
    """Train ``strategy`` task by task, evaluating on all seen test sets at each boundary."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if len(stream) == 0:
        raise ValueError("empty task stream")
    n = stream.input_dim
    if cfg.latent_dim >= n:
        raise ValueError(f"latent_dim {cfg.latent_dim} must be below the stream's input size {n}")
    if strategy in AHR_STRATEGIES:
        cfg = cfg.replace(ablation=AHR_STRATEGIES[strategy])
    report = RunReport(strategy, cfg.digest(), cfg.seed,
                       test_counts=[len(t.test) for t in stream.tasks])
    t0 = time.perf_counter()
    if strategy in AHR_STRATEGIES:
        _run_ahr(stream, cfg, report, checkpoint_dir)
    else:
        _run_baseline(strategy, stream, cfg, report, fte_budget)
    report.wall_seconds = time.perf_counter() - t0
    report.check()
    return report


def _run_ahr(stream, cfg, report, checkpoint_dir):
    n = stream.input_dim
    state = LearnerState.initial(cfg, n)
    space, cap = memory_plan(cfg, n)
    dec_bytes = decoder_param_count(cfg, n) * FLOAT_BYTES if space == LATENT else 0
    report.memory_capacity = cap
    for ell, task in enumerate(stream.tasks, 1):
        state = learn_task(state, task.train.x, task.train.y, cfg)
        _check_memory(state.memory, ell)
        row, cum = _evaluate(lambda x: classify(state.model, state.centroids, x)[1], stream, ell)
        report.accuracy.append(row)
        report.cumulative.append(cum)
        report.samples_processed.append(state.history[-1].samples_processed)
        report.stored_bytes.append(cap * state.memory.dim * FLOAT_BYTES + dec_bytes)
        report.occupied_bytes.append(len(state.memory) * state.memory.dim * FLOAT_BYTES + dec_bytes)
        report.memory_entries.append(len(state.memory))
        if checkpoint_dir is not None:
            save_checkpoint(state, cfg, checkpoint_dir)
        log.info("%s task %d: cumulative accuracy %.4f", report.strategy, ell, cum)


def _run_baseline(strategy, stream, cfg, report, fte_budget):
    n = stream.input_dim
    clf = make_classifier(cfg, n, stream.all_classes())
    seen: list[int] = []
    cap = fte_capacity(cfg, n, fte_budget) if strategy == "FT-E" else 0
    memory = LatentMemory(cap, n, INPUT) if strategy == "FT-E" else None
    report.memory_capacity = cap
    xs, ys = [], []
    for ell, task in enumerate(stream.tasks, 1):
        seen += task.classes
        x, y = task.train.x, task.train.y
        if strategy == "Joint":
            xs.append(x)
            ys.append(y)
            x, y = np.concatenate(xs), np.concatenate(ys)
        processed = train_classifier(clf, x, y, seen, cfg, ell, tag=7, memory=memory)
        if strategy == "FT-E":
            px, py, pt = task.train.x, task.train.y, np.full(len(task.train), ell)
            if len(memory):
                px = np.concatenate((px, memory.vectors))
                py = np.concatenate((py, memory.labels))
                pt = np.concatenate((pt, memory.tasks))
            memory = select_raw_exemplars(clf, px, py, pt, seen, cap)
            _check_memory(memory, ell)
        row, cum = _evaluate(lambda q: clf.predict(q, seen), stream, ell)
        report.accuracy.append(row)
        report.cumulative.append(cum)
        report.samples_processed.append(processed)
        if strategy == "FT-E":
            report.stored_bytes.append(cap * n * FLOAT_BYTES)
            report.occupied_bytes.append(len(memory) * n * FLOAT_BYTES)
            report.memory_entries.append(len(memory))
        elif strategy == "Joint":
            report.stored_bytes.append(int(x.shape[0]) * n * FLOAT_BYTES)
            report.occupied_bytes.append(int(x.shape[0]) * n * FLOAT_BYTES)
            report.memory_entries.append(int(x.shape[0]))
        else:
            report.stored_bytes.append(0)
            report.occupied_bytes.append(0)
            report.memory_entries.append(0)
        log.info("%s task %d: cumulative accuracy %.4f", strategy, ell, cum)
