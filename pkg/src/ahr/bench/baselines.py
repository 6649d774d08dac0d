"""Softmax-classifier baselines: fine-tuning, fine-tuning with raw exemplars, joint training.

All three share the encoder's dense backbone with a linear head over every
class of the stream; logits of classes not yet seen are masked out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..memory import INPUT, LatentMemory, per_class_quota, rank_select, sample_replay_batch
from ..numeric import AdamState, DenseNet, adam_step, backward, forward, init_dense, predict, softmax_xent
from ..trainer import TrainConfig, split_sizes


@dataclass(eq=False)
class Classifier:
    net: DenseNet
    classes: list[int]  # every class of the stream, in head order

    def __post_init__(self):
        self.col = {c: k for k, c in enumerate(self.classes)}

    def mask(self, seen) -> np.ndarray:
        m = np.zeros(len(self.classes), dtype=bool)
        m[[self.col[c] for c in seen]] = True
        return m

    def predict(self, x, seen) -> np.ndarray:
        logits = predict(self.net, x)
        logits = np.where(self.mask(seen)[None, :], logits, -np.inf)
        return np.asarray(self.classes)[np.argmax(logits, axis=1)]

    def features(self, x) -> np.ndarray:
        _, cache = forward(self.net, x)
        return cache.inputs[-1]


def make_classifier(cfg: TrainConfig, input_dim: int, classes) -> Classifier:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    return Classifier(init_dense([input_dim, *cfg.hidden, len(classes)], rng), list(classes))


def train_classifier(clf: Classifier, x, y, seen, cfg: TrainConfig, ell: int, tag: int,
                     memory: LatentMemory | None = None) -> int:
    """Adam on masked cross-entropy; returns rows processed.

    With ``memory`` the minibatch holds round(B/ell) new rows plus
    class-balanced raw exemplars, as in the replay learner.
    """
    mask = clf.mask(seen)
    opt = AdamState.zeros_like(clf.net.params())
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, ell, tag]))
    replay = memory is not None and len(memory) > 0 and ell > 1
    n_new = split_sizes(cfg.minibatch_size, ell)[0] if replay else cfg.minibatch_size
    n_rep = cfg.minibatch_size - n_new
    processed = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(y))
        for b, start in enumerate(range(0, len(y), n_new)):
            idx = perm[start:start + n_new]
            bx, by = x[idx], y[idx]
            if replay:
                k = n_rep if len(idx) == n_new else int(np.floor(len(idx) * n_rep / n_new + 0.5))
                if k:
                    rx, ry, _ = sample_replay_batch(memory, None, k, np.random.SeedSequence([cfg.seed, ell, tag, epoch, b]))
                    bx, by = np.concatenate((bx, rx)), np.concatenate((by, ry))
            logits, cache = forward(clf.net, bx)
            cols = np.array([clf.col[int(c)] for c in by])
            _, g = softmax_xent(logits, cols, mask)
            grads, _ = backward(clf.net, cache, g)
            adam_step(clf.net.params(), grads, opt, cfg.lr)
            clf.net.touch()
            processed += bx.shape[0]
    return processed


def select_raw_exemplars(clf: Classifier, x, y, tasks, seen, capacity: int) -> LatentMemory:
    """Keep, per class, the rows whose backbone features lie closest to the class mean."""
    feats = clf.features(x)
    losses = np.zeros(len(y))
    for c in seen:
        rows = y == c
        mu = feats[rows].mean(axis=0)
        losses[rows] = np.sum((feats[rows] - mu) ** 2, axis=1)
    sel = rank_select(losses, y, sorted(seen), per_class_quota(capacity, len(seen)))
    return LatentMemory(capacity, x.shape[1], INPUT, x[sel], tasks[sel], y[sel], sel)
