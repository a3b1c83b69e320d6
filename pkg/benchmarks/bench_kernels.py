#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times one embedding-training epoch and a batch of decoder steps at
realistic sizes (entity/vocab counts trimmed so a run stays quick).

    python benchmarks/bench_kernels.py            # small sizes
    python benchmarks/bench_kernels.py --full     # paper-scale dims
"""

import argparse
import time

import numpy as np

from fact2question import kernels


def time_fn(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        started = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - started)
    return best


def bench_transe(n_entities, n_triples, dim, repeat=5):
    rng = np.random.default_rng(0)
    n_rel = max(8, n_entities // 50)
    s = rng.integers(0, n_entities, n_triples).astype(np.int64)
    r = rng.integers(0, n_rel, n_triples).astype(np.int64)
    o = rng.integers(0, n_entities, n_triples).astype(np.int64)
    order = rng.permutation(n_triples).astype(np.int64)
    corrupt = rng.integers(0, 2, n_triples).astype(np.uint8)
    neg = rng.integers(0, n_entities, n_triples).astype(np.int64)

    results = {}
    for name, fn in _variants("transe_epoch"):
        ent = rng.normal(scale=0.1, size=(n_entities, dim))
        rel = rng.normal(scale=0.1, size=(n_rel, dim))
        fn(ent, rel, s, r, o, order, corrupt, neg, 0.01, 1.0)  # warm/jit
        results[name] = time_fn(fn, ent, rel, s, r, o, order, corrupt, neg,
                                0.01, 1.0, repeat=repeat)
    _print_row(f"transe epoch ({n_triples} triples, dim {dim})", results,
               per=n_triples)


def bench_decode(hidden, d_dec, vocab, steps=200, repeat=5):
    rng = np.random.default_rng(1)
    e_w = rng.normal(size=d_dec)
    h = rng.normal(size=hidden)
    enc_s, enc_r, enc_o = (rng.normal(size=hidden) for _ in range(3))
    enc_all = np.concatenate((enc_s, enc_r, enc_o))
    weights = (
        rng.normal(scale=0.05, size=(hidden, 4 * hidden)),
        rng.normal(scale=0.05, size=(3, hidden)),
        rng.normal(scale=0.05, size=(hidden, d_dec)),
        rng.normal(scale=0.05, size=(hidden, hidden)),
        rng.normal(scale=0.05, size=(hidden, hidden)),
        rng.normal(scale=0.05, size=(hidden, d_dec)),
        rng.normal(scale=0.05, size=(hidden, hidden)),
        rng.normal(scale=0.05, size=(hidden, hidden)),
        rng.normal(scale=0.05, size=(hidden, d_dec)),
        rng.normal(scale=0.05, size=(hidden, hidden)),
        rng.normal(scale=0.05, size=(hidden, hidden)),
        rng.normal(scale=0.05, size=(hidden, hidden)),
        rng.normal(scale=0.05, size=(hidden, d_dec)),
        rng.normal(scale=0.05, size=(hidden, hidden)),
        rng.normal(scale=0.05, size=(vocab, hidden)),
    )

    def run_steps(fn):
        state = h
        for _ in range(steps):
            state, logits, _ = fn(e_w, state, enc_s, enc_r, enc_o, enc_all,
                                  *weights)
        return logits

    results = {}
    for name, fn in _variants("decode_step"):
        run_steps(fn)  # warm/jit
        results[name] = time_fn(run_steps, fn, repeat=repeat)
    _print_row(f"decode steps (H {hidden}, V {vocab}, {steps} steps)", results,
               per=steps)


def _variants(prefix):
    out = [("numpy", getattr(kernels, f"{prefix}_numpy"))]
    if kernels.HAS_NUMBA:
        out.append(("numba", getattr(kernels, f"{prefix}_numba")))
    return out


def _print_row(label, results, per):
    parts = []
    for name, seconds in results.items():
        parts.append(f"{name} {seconds * 1e6 / per:9.2f} us/it")
    if len(results) == 2 and "numba" in results and results["numba"] > 0:
        parts.append(f"speedup x{results['numpy'] / results['numba']:.2f}")
    print(f"{label:45s} " + "  ".join(parts))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--full", action="store_true",
                        help="paper-scale dims (slower)")
    args = parser.parse_args()
    print(f"selected backend: {kernels.BACKEND} "
          f"(numba available: {kernels.HAS_NUMBA})")
    if args.full:
        bench_transe(n_entities=50_000, n_triples=200_000, dim=200, repeat=3)
        bench_decode(hidden=600, d_dec=200, vocab=7000, steps=200, repeat=3)
    else:
        bench_transe(n_entities=2000, n_triples=20_000, dim=50)
        bench_decode(hidden=128, d_dec=64, vocab=1000, steps=200)


if __name__ == "__main__":
    main()
