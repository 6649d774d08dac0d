import numpy as np
import pytest

from ahr.bench.data import make_synthetic
from ahr.cce import CentroidSet, RFAConfig
from ahr.hae import build_hae
from ahr.memory import LATENT, LatentMemory
from ahr.trainer import (
    LearnerState,
    TrainConfig,
    build_minibatch,
    classify,
    learn_task,
    load_checkpoint,
    memory_plan,
    save_checkpoint,
    split_sizes,
    train_on_task,
)

SMALL = TrainConfig(epochs=2, minibatch_size=16, budget=40, hidden=(12,), latent_dim=3, lr=0.005)


@pytest.fixture(scope="module")
def stream():
    return make_synthetic(0, 3, 2, 8, 20, 6.0, test_per_class=10)


def test_split_sizes():
    assert split_sizes(128, 1) == (128, 0)
    assert split_sizes(128, 2) == (64, 64)
    assert split_sizes(128, 4) == (32, 96)
    assert split_sizes(128, 3) == (43, 85)
    assert split_sizes(10, 4) == (3, 7)  # 2.5 rounds up
    with pytest.raises(ValueError):
        split_sizes(10, 0)


def test_memory_plan():
    cfg = TrainConfig()
    assert memory_plan(cfg, 784) == ("latent", 8000)
    assert memory_plan(cfg.replace(ablation="lossless"), 784) == ("input", 8000)
    assert memory_plan(cfg.replace(ablation="lossless_mini"), 784) == ("input", 204)
    assert memory_plan(cfg.replace(ablation="lossy_mini"), 784) == ("latent", 204)


def test_config_round_trip_and_digest():
    cfg = SMALL.replace(rfa=RFAConfig(zeta=3.0))
    back = TrainConfig.from_dict(cfg.to_dict())
    assert back == cfg and back.digest() == cfg.digest()
    assert cfg.digest() != SMALL.digest()
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"epochz": 3})
    with pytest.raises(ValueError):
        TrainConfig(ablation="nope")


def test_minibatch_mix():
    rng = np.random.default_rng(0)
    mem = LatentMemory(20, 3, LATENT, rng.normal(size=(6, 3)), np.ones(6, int), np.repeat([0, 1], 3))
    dec = build_hae(5, [4], 3, rng)
    x, y = rng.normal(size=(40, 5)), np.full(40, 7)
    bx, by, n_new = build_minibatch(x, y, mem, dec, 16, 4, seed=1)
    assert bx.shape == (16, 5) and n_new == 4
    assert np.all(by[:4] == 7) and set(by[4:].tolist()) == {0, 1}
    # a short final batch scales the replay share with it
    bx, by, n_new = build_minibatch(x[:2], y[:2], mem, dec, 16, 4, seed=1)
    assert n_new == 2 and bx.shape[0] == 2 + 6
    bx, _, n_new = build_minibatch(x, y, mem, dec, 16, 1, seed=1)
    assert n_new == 16 and bx.shape[0] == 16


def test_zero_epochs_returns_equal_copy(stream):
    state = LearnerState.initial(SMALL, 8)
    t = stream.tasks[0]
    cs = CentroidSet()
    cs.add(1, 0, [0.0, 0.0, 1.0])
    cs.add(1, 1, [0.0, 1.0, 0.0])
    model, stats = train_on_task(state.model, None, t.train.x, t.train.y, state.memory, cs,
                                 SMALL.replace(epochs=0), 1)
    assert model is not state.model and model.same_params(state.model)
    assert stats.samples_processed == 0


def test_learning_leaves_previous_state_untouched(stream):
    s1 = learn_task(LearnerState.initial(SMALL, 8), stream.tasks[0].train.x, stream.tasks[0].train.y, SMALL)
    model_before = s1.model.copy()
    cents_before = s1.centroids.positions().copy()
    mem_before = s1.memory.vectors.copy()
    s2 = learn_task(s1, stream.tasks[1].train.x, stream.tasks[1].train.y, SMALL)
    assert s1.model.same_params(model_before)
    assert np.array_equal(s1.memory.vectors, mem_before)
    assert np.array_equal(s2.centroids.positions()[:2], cents_before)
    assert s2.tasks_seen == 2 and len(s2.centroids) == 4
    assert len(s2.memory) <= SMALL.budget
    assert s2.memory.class_counts() == {c: SMALL.budget // 4 for c in range(4)}
    with pytest.raises(ValueError, match="already learned"):
        learn_task(s2, stream.tasks[0].train.x, stream.tasks[0].train.y, SMALL)


def test_classify_hand_example():
    # encoder keeps the first two inputs, so the nearest centroid is visible by eye
    from ahr.hae import HAEModel
    from ahr.numeric import IDENTITY, DenseNet, Layer

    enc = DenseNet([Layer(np.eye(2, 3), np.zeros(2), IDENTITY)])
    dec = DenseNet([Layer(np.eye(3, 2), np.zeros(3), IDENTITY)])
    model = HAEModel(enc, dec)
    cs = CentroidSet()
    cs.add(1, 0, [0.0, 0.0])
    cs.add(1, 1, [4.0, 0.0])
    cs.add(2, 5, [0.0, 4.0])
    x = np.array([[0.5, 0.2, 9.0], [3.0, 0.0, 0.0], [0.0, 3.5, 0.0], [2.0, 0.0, 0.0]])
    tasks, labels = classify(model, cs, x)
    assert labels.tolist() == [0, 1, 5, 0]  # the last row is a tie, won by (1, 0)
    assert tasks.tolist() == [1, 1, 2, 1]
    shift = np.array([7.0, -3.0])
    cs2 = CentroidSet()
    for c in cs.entries:
        cs2.add(c.task, c.label, c.position + shift)
    x2 = x.copy()
    x2[:, :2] += shift
    assert classify(model, cs2, x2)[1].tolist() == [0, 1, 5, 0]


def test_classify_without_centroids():
    model = build_hae(4, [3], 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        classify(model, CentroidSet(), np.zeros((1, 4)))


def test_reproducible_and_checkpoint(stream, tmp_path):
    def run():
        s = LearnerState.initial(SMALL, 8)
        for t in stream.tasks[:2]:
            s = learn_task(s, t.train.x, t.train.y, SMALL)
        return s
    a, b = run(), run()
    assert a.model.same_params(b.model)
    assert np.array_equal(a.centroids.positions(), b.centroids.positions())
    assert np.array_equal(a.memory.vectors, b.memory.vectors)
    d = save_checkpoint(a, SMALL, tmp_path)
    assert d.name == "task_002"
    back = load_checkpoint(d)
    assert back.model.same_params(a.model) and back.tasks_seen == 2
    assert back.centroids.keys() == a.centroids.keys()
    x = stream.tasks[0].test.x
    assert np.array_equal(classify(back.model, back.centroids, x)[1], classify(a.model, a.centroids, x)[1])


def test_learner_separates_synthetic_tasks():
    s = make_synthetic(1, 2, 2, 10, 60, 8.0, test_per_class=30)
    cfg = TrainConfig(epochs=15, minibatch_size=32, budget=80, hidden=(32,), latent_dim=4, lr=0.003)
    state = LearnerState.initial(cfg, 10)
    for t in s.tasks:
        state = learn_task(state, t.train.x, t.train.y, cfg)
    x = np.concatenate([t.test.x for t in s.tasks])
    y = np.concatenate([t.test.y for t in s.tasks])
    assert np.mean(classify(state.model, state.centroids, x)[1] == y) > 0.9
    losses = state.history[0].epoch_loss
    assert losses[-1] < losses[0]
