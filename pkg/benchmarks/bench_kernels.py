"""Time the numba and numpy kernel paths on centroid repulsion and nearest-centroid lookup.

    python3 benchmarks/bench_kernels.py --repeat 5
"""
import argparse
import time

import numpy as np

from ahr import kernels


def best_of(fn, repeat):
    fn()  # warm up (numba compiles on first call)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def rfa_case(frozen_n, movers_n, dim, steps, backend):
    rng = np.random.default_rng(0)
    frozen = rng.normal(size=(frozen_n, dim))
    start = rng.normal(size=(movers_n, dim))

    def run():
        pos, vel = start.copy(), np.zeros_like(start)
        kernels.rfa_integrate(pos, vel, frozen, 1.0, 1.0, 0.01, 0.9, 0, steps, 1e6, 1e-9, backend=backend)
    return run


def nearest_case(rows, k, dim, backend):
    rng = np.random.default_rng(1)
    z, c = rng.normal(size=(rows, dim)), rng.normal(size=(k, dim))
    return lambda: kernels.nearest(z, c, backend=backend)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = [
        ("rfa 8 frozen + 2 movers, m=20, 500 steps", lambda b: rfa_case(8, 2, 20, 500, b)),
        ("rfa 90 frozen + 10 movers, m=20, 500 steps", lambda b: rfa_case(90, 10, 20, 500, b)),
        ("nearest 10000 x 10 centroids, m=20", lambda b: nearest_case(10000, 10, 20, b)),
        ("nearest 10000 x 100 centroids, m=20", lambda b: nearest_case(10000, 100, 20, b)),
    ]
    print(f"{'case':48s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    for name, make in cases:
        t_np = best_of(make("numpy"), args.repeat)
        t_nb = best_of(make("numba"), args.repeat)
        print(f"{name:48s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}")


if __name__ == "__main__":
    main()
