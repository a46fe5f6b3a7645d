"""Timing comparison of the compiled kernels against their numpy twins.

Runs the LSTM forward+backward recurrence and the segment edit distance on
realistic sizes under both backends and prints median wall times plus the
speedup.  The compiled path is warmed up first so JIT compilation is not
billed to the measurement.

Usage: python benchmarks/backend_bench.py [--repeats 7]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from skelact import kernels


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_lstm(repeats: int, batch=32, features=256 * 13, hidden=256, frames=80):
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.normal(size=(frames, batch, features)))
    wx = rng.normal(size=(features, 4 * hidden)) / np.sqrt(features)
    wh = rng.normal(size=(hidden, 4 * hidden)) / np.sqrt(hidden)
    b = np.zeros(4 * hidden)
    h0 = np.zeros((batch, hidden))
    c0 = np.zeros((batch, hidden))
    dh = rng.normal(size=(frames, batch, hidden))

    results = {}
    for name, fwd, bwd in (
        ("numpy", kernels.lstm_forward_numpy, kernels.lstm_backward_numpy),
        ("numba", getattr(kernels, "lstm_forward_numba", None),
         getattr(kernels, "lstm_backward_numba", None)),
    ):
        if fwd is None:
            continue
        h, c, gates = fwd(x, wx, wh, b, h0, c0)  # warmup (and JIT compile)
        bwd(x, wx, wh, h, c, gates, h0, c0, dh)

        def run():
            h, c, gates = fwd(x, wx, wh, b, h0, c0)
            bwd(x, wx, wh, h, c, gates, h0, c0, dh)

        results[name] = _median_time(run, repeats)
    return f"lstm fwd+bwd ({frames}x{batch}x{features} -> {hidden})", results


def bench_levenshtein(repeats: int):
    rng = np.random.default_rng(1)
    a = rng.integers(0, 12, size=2000).astype(np.int64)
    b = rng.integers(0, 12, size=2000).astype(np.int64)

    results = {}
    candidates = [("numpy", kernels.levenshtein_numpy)]
    if kernels.NUMBA_AVAILABLE:
        candidates.append(("numba", kernels.levenshtein_numba))
    for name, fn in candidates:
        fn(a[:10], b[:10])  # warmup / compile
        results[name] = _median_time(lambda: fn(a, b), repeats)
    return "edit distance (2000x2000 dp)", results


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    print(f"numba available: {kernels.NUMBA_AVAILABLE}")
    rows = [
        # production size: BLAS matmuls dominate, compilation is roughly a wash
        bench_lstm(args.repeats),
        # small size: per-frame loop overhead and temporaries actually show up
        bench_lstm(args.repeats, batch=4, features=96, hidden=48, frames=200),
        bench_levenshtein(args.repeats),
    ]
    print(f"{'benchmark':<44} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for label, results in rows:
        np_t = results.get("numpy")
        nb_t = results.get("numba")
        nb_text = f"{nb_t * 1e3:8.1f}ms" if nb_t else "       -"
        ratio = f"{np_t / nb_t:7.1f}x" if nb_t else "       -"
        print(f"{label:<44} {np_t * 1e3:8.1f}ms {nb_text} {ratio}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
