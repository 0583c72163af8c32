#!/usr/bin/env python3
"""Compare the jitted kernels against the plain numpy fallbacks.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

Times the two hot paths (pair-orbit flood fill, circular convolution) on a
range of problem sizes and prints a small table with the speedup.
"""

import argparse
import time

import numpy as np

from equiset import _kernels, backend
from equiset.permgroup import (
    cyclic,
    graph_conjugation,
    product_group,
    symmetric,
    wreath_generators,
)


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pair_orbits(repeats):
    cases = [
        ("sym:40", symmetric(40)),
        ("graph:8", graph_conjugation(8)),
        ("prod(sym:8,cyclic:12)", product_group(symmetric(8), cyclic(12))),
        ("wreath(cyclic:8, n=12)", wreath_generators(cyclic(8), 12)),
    ]
    rows = []
    for name, gens in cases:
        arr = gens.gen_array()
        ref = lambda: _kernels.pair_orbit_labels_numpy(arr)
        jit = lambda: _kernels.pair_orbit_labels_numba(arr)
        jit()  # compile outside the timed region
        rows.append((f"pair-orbits {name}", timeit(ref, repeats), timeit(jit, repeats)))
    return rows


def bench_circ_conv(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for B, f, g, d, k in ((256, 1, 12, 100, 5), (1600, 12, 12, 50, 5), (3200, 12, 8, 25, 5)):
        x = rng.standard_normal((B, f, d))
        kern = rng.standard_normal((g, f, k))
        dout = rng.standard_normal((B, g, d))
        c = k // 2
        name = f"{B}x{f}x{d} k={k}"
        fwd_ref = lambda: _kernels.circ_conv_fwd_numpy(x, kern, c)
        fwd_jit = lambda: _kernels.circ_conv_fwd_numba(x, kern, c)
        bwd_ref = lambda: _kernels.circ_conv_grad_kern_numpy(dout, x, k, c)
        bwd_jit = lambda: _kernels.circ_conv_grad_kern_numba(dout, x, k, c)
        fwd_jit(), bwd_jit()
        rows.append((f"conv fwd {name}", timeit(fwd_ref, repeats), timeit(fwd_jit, repeats)))
        rows.append((f"conv dkern {name}", timeit(bwd_ref, repeats), timeit(bwd_jit, repeats)))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if not backend.HAS_NUMBA:
        raise SystemExit(
            "numba backend is not active; unset EQUISET_BACKEND and ensure "
            "numba is installed to benchmark both paths"
        )

    rows = bench_pair_orbits(args.repeats) + bench_circ_conv(args.repeats)
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, ref, jit in rows:
        print(f"{name:{width}}  {ref * 1e3:9.2f}ms  {jit * 1e3:9.2f}ms  {ref / jit:7.1f}x")


if __name__ == "__main__":
    main()
