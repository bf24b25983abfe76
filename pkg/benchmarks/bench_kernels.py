"""Time the compiled and pure-Python kernels on the same inputs.

    python benchmarks/bench_kernels.py [--steps N] [--repeat R]

Prints one row per kernel with the best-of-R wall time for each backend,
the speedup and whether the outputs are bitwise equal.
"""
import argparse
import time

import numpy as np

from rlsa import kernels
from rlsa.algorithms import StepSchedule
from rlsa.mdp import Policy, augmented_td_kernel, induce_chain, pair_law, random_features, random_mdp
from rlsa.trajectory import categorical_cdf


def best_time(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(steps):
    ch = induce_chain(random_mdp(5, 1, 0.9, seed=0), Policy.uniform(5, 1))
    X = random_features(5, 3, seed=0).X
    K = augmented_td_kernel(ch)
    cdf, icdf = categorical_cdf(K.rows), categorical_cdf(pair_law(ch))[0]
    u = np.random.default_rng(0).random(steps + 1)
    al = StepSchedule.inv_poly(0.8).alphas(steps)
    rec = np.unique(np.round(np.geomspace(1, steps, 16)).astype(np.int64))
    y = kernels.sample_path(cdf, icdf, u)
    s, sp = y // 5, y % 5
    R = random_mdp(4, 2, 0.8, seed=0).reward
    gen = np.random.default_rng(1)
    qs, qa, qsp = gen.integers(0, 4, steps + 1), gen.integers(0, 2, steps + 1), gen.integers(0, 4, steps + 1)
    T = 1.0 / (np.arange(steps) + 2.0)
    return {
        "sample_path": lambda b: b.sample_path(cdf, icdf, u),
        "linear_td_run": lambda b: b.linear_td_run(s, sp, X, ch.r_pi, 0.9, al, np.zeros(3), rec),
        "q_learning_run": lambda b: b.q_learning_run(qs, qa, qsp, R, 0.8, al, np.zeros((4, 2)), rec),
        "rs_envelope": lambda b: b.rs_envelope(1.0, T, 1.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backs = kernels.backends()
    if "cython" not in backs:
        print("compiled extension not built; only the Python backend is available")
    print(f"steps={args.steps} default backend={kernels.BACKEND}")
    print(f"{'kernel':<16}{'python s':>12}{'cython s':>12}{'speedup':>10}  equal")
    for name, fn in cases(args.steps).items():
        tp, op = best_time(lambda: fn(backs["python"]), args.repeat)
        if "cython" in backs:
            tc, oc = best_time(lambda: fn(backs["cython"]), args.repeat)
            eq = np.array_equal(op, oc)
            print(f"{name:<16}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}  {eq}")
        else:
            print(f"{name:<16}{tp:>12.4f}{'-':>12}{'-':>10}  -")


if __name__ == "__main__":
    main()
