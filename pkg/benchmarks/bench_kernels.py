"""Time the numba kernels against their numpy fallbacks on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both implementations are looked up directly in ``fidcov.kernels.IMPLEMENTATIONS``,
so the FIDCOV_NUMBA flag does not matter here.  Each kernel is warmed up once
(compilation is excluded) and the best of ``--repeat`` timings is reported.
"""
import argparse
import itertools
import time

import numpy as np

from fidcov import kernels, scenarios
from fidcov.density import clique_term_constants


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    sc = scenarios.simulate_scenario(15, 30, "sparse", max_col=3, rng=rng)
    S = np.ascontiguousarray(sc.obs.scatter)
    A = np.ascontiguousarray(sc.A0)
    free = np.ascontiguousarray(A != 0)
    n = float(sc.obs.n)
    rows, cols = (np.ascontiguousarray(x, dtype=np.int64) for x in np.nonzero(free))
    m = rows.size
    steps = np.full(m, np.log(0.05))
    normals = rng.standard_normal(m)
    log_u = np.log(rng.random(m))

    def mh(impl):
        A1 = A.copy()
        ll, lj = impl["gfd_l2"](A1, S, free, n)
        cur = ll + lj
        for _ in range(20):
            cur, _ = impl["mh_sweep_l2"](A1, S, free, n, rows, cols, steps, normals, log_u, cur)

    U = rng.standard_normal((12, 4))
    combos = np.array(list(itertools.combinations(range(12), 4)), dtype=np.int64)

    cl = scenarios.simulate_scenario(20, 1000, "clique", k=4, rng=rng)
    S20 = np.ascontiguousarray(cl.obs.scatter)
    const = clique_term_constants(20, 1000, True)
    order = np.arange(20, dtype=np.int64)
    unif = rng.random(20)
    labels0 = np.arange(20, dtype=np.int64) % 4

    return {
        "gfd_l2 (p=15)": lambda impl: [impl["gfd_l2"](A, S, free, n) for _ in range(200)],
        "mh_sweep_l2 x20 (p=15, sparse truth)": mh,
        "mean_abs_subdet (C(12,4) subsets)": lambda impl: impl["mean_abs_subdet"](U, combos),
        "gibbs_sweep_l2 x20 (p=20)": lambda impl: [
            impl["gibbs_sweep_l2"](S20, labels0.copy(), const, 1000.0, order, unif) for _ in range(20)],
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':40s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>9s}")
    for name, fn in cases(rng).items():
        t_nb = best_time(lambda: fn(kernels.IMPLEMENTATIONS["numba"]), args.repeat)
        t_np = best_time(lambda: fn(kernels.IMPLEMENTATIONS["numpy"]), args.repeat)
        print(f"{name:40s} {1e3 * t_nb:12.3f} {1e3 * t_np:12.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
