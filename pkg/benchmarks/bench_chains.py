#!/usr/bin/env python3
"""Throughput comparison of the chain-simulation backends.

Runs the same batched draft-verify workload through the compiled kernel and
the numpy fallback, checks they produce identical output, and reports
chains/second for each.

    python3 benchmarks/bench_chains.py --S 4 --D 8 --n 200000
"""

import argparse
import time

import numpy as np

from ssmd import chains
from ssmd.core import SequenceSpec, make_rng, sample_ordering
from ssmd.models.tabular import TabularModel


def run(backend, tables, n, seed, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = chains.simulate_chains(tables, n, seed=seed, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return out, best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--S", type=int, default=4, help="vocabulary size")
    ap.add_argument("--D", type=int, default=8, help="sequence length")
    ap.add_argument("--n", type=int, default=200_000, help="number of chains")
    ap.add_argument("--eps", type=float, default=0.3, help="draft perturbation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=3, help="timing repeats, best-of")
    args = ap.parse_args()

    rng = make_rng(args.seed)
    model = TabularModel.random(
        SequenceSpec(S=args.S, D=args.D), rng, draft_mode="perturbed", eps=args.eps
    )
    tables = chains.build_chain_tables(model, sample_ordering(rng, args.D))

    backends = ["python"]
    if chains.BACKEND == "cython":
        backends.insert(0, "cython")
    else:
        print("compiled backend not built; timing the numpy fallback only")

    results = {}
    for backend in backends:
        out, dt = run(backend, tables, args.n, args.seed, args.repeats)
        results[backend] = (out, dt)
        print(f"{backend:>7}: {args.n / dt:>12,.0f} chains/s   ({dt * 1e3:8.1f} ms, "
              f"mean rejections {out.reject_counts.mean():.3f})")

    if len(results) == 2:
        a, b = results["cython"][0], results["python"][0]
        assert np.array_equal(a.sequences, b.sequences)
        assert np.array_equal(a.reject_counts, b.reject_counts)
        speedup = results["python"][1] / results["cython"][1]
        print(f"outputs identical; compiled kernel is {speedup:.1f}x faster")


if __name__ == "__main__":
    main()
