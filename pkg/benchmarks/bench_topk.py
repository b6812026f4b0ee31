#!/usr/bin/env python3
"""Benchmark the compiled top-k kernel against the pure-NumPy path.

The pure path materializes the full query-by-corpus score matrix and
lexsorts every row; the compiled path fuses scoring with a running top-k
selection, keeping memory at O(n_q * k). Reports wall time and the peak
size of the transient score buffer for a few corpus sizes.

    python benchmarks/bench_topk.py
    python benchmarks/bench_topk.py --corpus-sizes 10000 100000 --dim 256
"""

import argparse
import time

import numpy as np

from crossfuse import kernels


def run_once(fn, queries, corpus, k, tie_rank, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn(queries, corpus, k, tie_rank)
        best = min(best, time.perf_counter() - start)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus-sizes", type=int, nargs="+", default=[1_000, 10_000, 50_000])
    parser.add_argument("--queries", type=int, default=64)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not kernels.HAVE_COMPILED:
        print("compiled kernel not built; benchmarking the pure path only")

    rng = np.random.default_rng(args.seed)
    queries = rng.standard_normal((args.queries, args.dim))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)

    print(
        f"{'corpus':>10} {'pure (s)':>10} {'compiled (s)':>13} {'speedup':>8} "
        f"{'score buffer':>13} {'agree':>6}"
    )
    for n in args.corpus_sizes:
        corpus = rng.standard_normal((n, args.dim))
        corpus /= np.linalg.norm(corpus, axis=1, keepdims=True)
        tie_rank = np.arange(n, dtype=np.int64)

        t_pure, (idx_p, scores_p) = run_once(
            kernels.topk_dot_pure, queries, corpus, args.k, tie_rank, args.repeats
        )
        buffer_mb = args.queries * n * 8 / 1e6
        if kernels.HAVE_COMPILED:
            t_comp, (idx_c, scores_c) = run_once(
                kernels.topk_dot_compiled, queries, corpus, args.k, tie_rank, args.repeats
            )
            agree = bool(np.array_equal(idx_p, idx_c)) and bool(
                np.max(np.abs(scores_p - scores_c)) < 1e-9
            )
            print(
                f"{n:>10d} {t_pure:>10.4f} {t_comp:>13.4f} {t_pure / t_comp:>7.2f}x "
                f"{buffer_mb:>10.1f} MB {str(agree):>6}"
            )
        else:
            print(f"{n:>10d} {t_pure:>10.4f} {'-':>13} {'-':>8} {buffer_mb:>10.1f} MB {'-':>6}")


if __name__ == "__main__":
    main()
