import csv

import numpy as np
import pytest

from ahr.cce import (
    CentroidSet,
    CoincidentPointsError,
    DivergenceError,
    RFAConfig,
    init_new_centroids,
    pairwise_force,
    place_task_centroids,
    potential_energy,
    rfa_simulate,
    write_trajectory_csv,
)


def test_force_hand_value():
    assert np.array_equal(pairwise_force([2.0, 0.0], [0.0, 0.0], 4.0), [1.0, 0.0])


def test_force_antisymmetric_exactly():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.normal(size=5), rng.normal(size=5)
        assert np.array_equal(pairwise_force(a, b, 1.3), -pairwise_force(b, a, 1.3))


def test_force_inverse_square():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, d = rng.normal(size=3), rng.normal(size=3)
        f1 = pairwise_force(a + d, a, 1.0)
        f2 = pairwise_force(a + 2 * d, a, 1.0)
        assert np.linalg.norm(f1) / np.linalg.norm(f2) == pytest.approx(4.0, rel=1e-12)


def test_force_coincident():
    with pytest.raises(CoincidentPointsError):
        pairwise_force([1.0, 1.0], [1.0, 1.0], 1.0)


def test_energy_two_unit_charges():
    assert potential_energy([[0.0, 0.0], [2.0, 0.0]]) == pytest.approx(0.5, abs=1e-12)
    # three collinear unit charges: 1/1 + 1/1 + 1/2 over the distinct pairs
    assert potential_energy([[0.0], [1.0], [2.0]]) == pytest.approx(2.5, abs=1e-12)
    assert potential_energy([[0.0, 0.0], [1.0, 0.0]], charge=3.0) == pytest.approx(9.0, abs=1e-12)


def test_energy_single_and_empty():
    assert potential_energy([[1.0, 2.0]]) == 0.0
    assert potential_energy([]) == 0.0


def test_energy_translation_rotation_invariant():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = rng.normal(size=(6, 4))
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        e = potential_energy(p)
        assert potential_energy(p + rng.normal(size=4) * 10) == pytest.approx(e, abs=1e-9)
        assert potential_energy(p @ q.T) == pytest.approx(e, abs=1e-9)


def test_energy_coincident():
    with pytest.raises(CoincidentPointsError):
        potential_energy([[1.0], [1.0]])


def test_single_mover_without_neighbours_stays_put():
    p = np.array([[0.3, -1.2, 4.0]])
    assert np.array_equal(rfa_simulate(p, np.zeros((0, 3))), p)


def test_one_dimensional_mover_matches_scalar_integration():
    cfg = RFAConfig()
    traj = []
    rfa_simulate([[1.0]], [[0.0]], cfg, trajectory=traj)
    xs = [t[0, 0] for t in traj]
    # independent scalar integration
    x, v, ref = 1.0, 0.0, [1.0]
    for _ in range(cfg.steps):
        f = cfg.zeta / (x * x)
        v = cfg.damping * v + f / cfg.mass * cfg.dt
        x = x + v * cfg.dt
        ref.append(x)
    assert np.allclose(xs, ref, rtol=1e-12, atol=0)
    assert np.all(np.diff(xs) > 0)


def test_symmetric_movers_stay_symmetric():
    out = rfa_simulate([[1.0, 0.0], [-1.0, 0.0]], [[0.0, 0.0]])
    assert np.array_equal(out[0], -out[1])
    assert out[0, 0] > 1.0 and out[0, 1] == 0.0


def test_frozen_positions_bit_unchanged():
    rng = np.random.default_rng(3)
    frozen = rng.normal(size=(6, 4))
    before = frozen.copy()
    rfa_simulate(rng.normal(size=(2, 4)), frozen)
    assert np.array_equal(frozen, before)


def test_place_task_centroids_keeps_old_entries():
    rng = np.random.default_rng(4)
    cs = place_task_centroids(CentroidSet(), 1, rng.normal(size=(20, 3)), np.repeat([0, 1], 10))
    old = cs.positions().copy()
    cs2 = place_task_centroids(cs, 2, rng.normal(size=(20, 3)), np.repeat([5, 4], 10))
    assert cs2.keys() == [(1, 0), (1, 1), (2, 4), (2, 5)]
    assert np.array_equal(cs2.positions()[:2], old)
    assert np.array_equal(cs.positions(), old)
    assert len(cs) == 2
    with pytest.raises(ValueError):
        cs2.entries[0].position[0] = 1.0


def _outside_scene(seed):
    """Random frozen cluster and one mover placed outside it."""
    rng = np.random.default_rng(seed)
    m, nf = int(rng.integers(2, 6)), int(rng.integers(1, 6))
    frozen = rng.normal(size=(nf, m))
    c = frozen.mean(axis=0)
    u = rng.normal(size=m)
    u /= np.linalg.norm(u)
    radius = np.abs(frozen - c).sum(axis=1).max()
    return c + u * (radius + rng.uniform(0.5, 3.0)), frozen


def test_single_mover_min_distance_monotone():
    for seed in range(50):
        mover, frozen = _outside_scene(seed)
        traj = []
        rfa_simulate(mover[None], frozen, RFAConfig(steps=300), trajectory=traj)
        dmin = [np.min(np.linalg.norm(frozen - p[0], axis=1)) for p in traj]
        assert np.all(np.diff(dmin) >= 0), seed


def test_energy_decreases_under_repulsion():
    rng = np.random.default_rng(5)
    frozen = rng.normal(size=(4, 3))
    start = rng.normal(size=(3, 3))
    end = rfa_simulate(start, frozen)
    assert potential_energy(np.vstack((frozen, end))) < potential_energy(np.vstack((frozen, start)))


def test_coincident_start_is_jittered():
    # a 1e-6 separation means a ~1e12 kick, so widen the box to watch it escape
    out = rfa_simulate([[1.0, 1.0]], [[1.0, 1.0]], RFAConfig(steps=50, bound=1e15), seed=0)
    assert np.all(np.isfinite(out))
    assert np.linalg.norm(out[0] - 1.0) > 1.0
    again = rfa_simulate([[1.0, 1.0]], [[1.0, 1.0]], RFAConfig(steps=50, bound=1e15), seed=0)
    assert np.array_equal(out, again)
    with pytest.raises(DivergenceError):
        rfa_simulate([[1.0, 1.0]], [[1.0, 1.0]], RFAConfig(steps=50), seed=0)


def test_divergence_raises():
    cfg = RFAConfig(dt=1.0, damping=1.0, bound=10.0, steps=5)
    with pytest.raises(DivergenceError) as exc:
        rfa_simulate([[1e-3, 0.0]], [[0.0, 0.0]], cfg)
    assert exc.value.step == 0 and exc.value.mover == 0


def test_rfa_deterministic_and_backend_independent():
    rng = np.random.default_rng(6)
    start, frozen = rng.normal(size=(3, 5)), rng.normal(size=(7, 5))
    a = rfa_simulate(start, frozen, backend="numpy")
    b = rfa_simulate(start, frozen, backend="numba")
    assert np.array_equal(a, b)
    assert np.array_equal(a, rfa_simulate(start, frozen, backend="numpy"))


def test_init_new_centroids_are_class_means():
    z = np.array([[0.0, 0.0], [2.0, 2.0], [10.0, 0.0]])
    classes, pos = init_new_centroids(z, [3, 3, 1])
    assert classes == [1, 3]
    assert np.array_equal(pos, [[10.0, 0.0], [1.0, 1.0]])


def test_rfa_config_validation():
    with pytest.raises(ValueError):
        RFAConfig(zeta=0.0)
    with pytest.raises(ValueError):
        RFAConfig(damping=1.5)
    with pytest.raises(ValueError):
        RFAConfig(steps=-1)


def test_centroid_set_json_and_duplicates():
    cs = CentroidSet()
    cs.add(2, 7, [1.0, 2.0])
    cs.add(1, 3, [0.1, -0.3])
    assert cs.keys() == [(1, 3), (2, 7)]
    back = CentroidSet.from_json(cs.to_json())
    assert back.keys() == cs.keys() and np.array_equal(back.positions(), cs.positions())
    with pytest.raises(ValueError):
        cs.add(3, 7, [0.0, 0.0])
    with pytest.raises(ValueError):
        cs.add(3, 8, [0.0])


def test_trajectory_csv(tmp_path):
    traj = []
    rfa_simulate([[1.0, 0.0], [0.0, 1.0]], [[0.0, 0.0]], RFAConfig(steps=3), trajectory=traj)
    assert len(traj) == 4
    path = tmp_path / "t.csv"
    write_trajectory_csv(path, traj, task=2, labels=[4, 5])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "task", "class", "dim_0", "dim_1"]
    assert len(rows) == 1 + 4 * 2
    assert rows[-1][:3] == ["3", "2", "5"]
    assert float(rows[-1][4]) == traj[-1][1, 1]
