"""Time each numba kernel against its numpy twin on a synthetic graph.

Usage:
    python3 benchmarks/bench_kernels.py --nodes 2000 --repeat 5

Both implementations are called directly, so GNNFAIR_DISABLE_NUMBA does not
matter here. The first numba call (compilation) is excluded from timings.
"""

import argparse
import time

import numpy as np

from gnnfair import kernels
from gnnfair.graph import to_csr
from gnnfair.synth import gen_homophilous


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(n_nodes, seed):
    per_class = max(1, n_nodes // 4)
    b = gen_homophilous(per_class, 4, 16, 8.0 / per_class, 1.0 / per_class, 1.0, 1.0, seed)
    a = to_csr(b)
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(b.features)
    train = rng.choice(b.num_nodes, size=max(1, b.num_nodes // 20), replace=False)
    logits = rng.standard_normal((b.num_nodes, 8))
    return {
        "propagate_mean": (a.indptr, a.indices, X),
        "multi_source_bfs": (a.indptr, a.indices, train),
        "harmonic_closeness": (a.indptr, a.indices),
        "brandes_betweenness": (a.indptr, a.indices),
        "pagerank": (a.indptr, a.indices, 0.85, 1e-12, 10_000),
        "nearest_rows": (X, np.ascontiguousarray(X[train])),
        "margin_indicators": (logits, 0.5),
    }


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--nodes", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    print(f"{'kernel':22s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, call_args in cases(args.nodes, args.seed).items():
        nb, npf = kernels.PAIRS[name]
        nb(*call_args)  # compile
        t_nb = best_of(lambda: nb(*call_args), args.repeat)
        t_np = best_of(lambda: npf(*call_args), args.repeat)
        print(f"{name:22s} {1e3 * t_nb:11.3f} {1e3 * t_np:11.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
