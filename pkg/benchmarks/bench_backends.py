#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs the three hot paths (word-table compilation, the class-factored
batch forward/backward, and one exchange-clustering pass) on synthetic
inputs sized like a mid-size training run and prints wall times plus
speedups. The numba path includes a warmup call so JIT compilation is
not timed.

Usage:
    python benchmarks/bench_backends.py [--vocab 20000] [--batch 10000]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mlbl import _kernels
from mlbl.clustering import _bigram_csr


def _time(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_factor_csr(rng, n_words, n_factors, avg_nnz=3):
    nnz_per_row = rng.integers(1, 2 * avg_nnz, size=n_words)
    indptr = np.zeros(n_words + 1, dtype=np.int64)
    np.cumsum(nnz_per_row, out=indptr[1:])
    indices = rng.integers(0, n_factors, size=indptr[-1]).astype(np.int64)
    data = rng.integers(1, 3, size=indptr[-1]).astype(np.float64)
    return indptr, indices, data


def bench_compose(rng, args, impls):
    n_factors = args.vocab // 2
    csr = make_factor_csr(rng, args.vocab, n_factors)
    table = rng.normal(size=(n_factors, args.dim))
    times = {}
    for name, kernels in impls.items():
        out = np.zeros((args.vocab, args.dim))
        kernels["compose_rows"](*csr, table, out)  # warmup
        times[name] = _time(lambda: kernels["compose_rows"](
            *csr, table, np.zeros((args.vocab, args.dim))))
    return times


def bench_classed(rng, args, impls):
    V, K, d, L = args.vocab, int(np.sqrt(args.vocab)), args.dim, args.batch
    class_of = rng.integers(0, K, size=V).astype(np.int64)
    class_of[:K] = np.arange(K)
    order = np.argsort(class_of, kind="stable")
    members_flat = order.astype(np.int64)
    members_indptr = np.zeros(K + 1, dtype=np.int64)
    np.cumsum(np.bincount(class_of, minlength=K), out=members_indptr[1:])
    scorable = np.arange(K, dtype=np.int64)
    S = rng.normal(size=(K, d))
    t = rng.normal(size=K)
    R = rng.normal(size=(V, d))
    b = rng.normal(size=V)
    p = rng.normal(size=(L, d))
    targets = rng.integers(0, V, size=L).astype(np.int64)

    times = {}
    for name, kernels in impls.items():
        def run():
            logps = np.empty(L)
            dp = np.zeros((L, d))
            gS = np.zeros((K, d))
            gt = np.zeros(K)
            gR = np.zeros((V, d))
            gb = np.zeros(V)
            kernels["classed_fwd_bwd"](p, targets, class_of, members_flat,
                                       members_indptr, scorable, S, t, R, b,
                                       logps, dp, gS, gt, gR, gb)
        run()  # warmup
        times[name] = _time(run)
    return times


def bench_exchange(rng, args, impls):
    n_words = min(args.vocab, 3000)
    K = int(np.sqrt(n_words))
    stream = rng.integers(0, n_words, size=20 * n_words)
    bigrams = {}
    for u, v in zip(stream[:-1], stream[1:]):
        bigrams[(int(u), int(v))] = bigrams.get((int(u), int(v)), 0) + 1
    (oi, oc, ov), (ii, ic, iv) = _bigram_csr(bigrams, n_words)
    visit = np.arange(n_words, dtype=np.int64)

    times = {}
    for name, kernels in impls.items():
        def run():
            class_of = (np.arange(n_words) % K).astype(np.int64)
            ncc = np.zeros((K, K))
            lcnt = np.zeros(K)
            rcnt = np.zeros(K)
            for (u, v), cnt in bigrams.items():
                ncc[class_of[u], class_of[v]] += cnt
                lcnt[class_of[u]] += cnt
                rcnt[class_of[v]] += cnt
            csize = np.bincount(class_of, minlength=K).astype(np.int64)
            mv = [np.empty(n_words, dtype=np.int64) for _ in range(3)]
            kernels["exchange_pass"](oi, oc, ov, ii, ic, iv, class_of, ncc,
                                     lcnt, rcnt, csize, visit, *mv)
        run()  # warmup
        times[name] = _time(run, repeats=2)
    return times


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--vocab", type=int, default=20000)
    parser.add_argument("--batch", type=int, default=10000)
    parser.add_argument("--dim", type=int, default=32)
    args = parser.parse_args()

    impls = {"numpy": _kernels.get_impls("numpy")}
    if _kernels.HAS_NUMBA:
        impls["numba"] = _kernels.get_impls("numba")
    else:
        print("numba not importable; benchmarking numpy only")

    rng = np.random.default_rng(0)
    rows = [
        ("compile word table", bench_compose(rng, args, impls)),
        ("class softmax fwd+bwd", bench_classed(rng, args, impls)),
        ("exchange pass", bench_exchange(rng, args, impls)),
    ]
    print(f"\nvocab={args.vocab} batch={args.batch} dim={args.dim}")
    print(f"{'kernel':<24}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for label, times in rows:
        np_t = times["numpy"]
        if "numba" in times:
            nb_t = times["numba"]
            print(f"{label:<24}{np_t:>11.4f}s{nb_t:>11.4f}s{np_t / nb_t:>9.1f}x")
        else:
            print(f"{label:<24}{np_t:>11.4f}s{'-':>12}{'-':>10}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
