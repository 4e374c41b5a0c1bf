"""Benchmark the sampled-mode SGD kernels: numba @njit vs numpy fallback.

The kernels update embedding rows sequentially (later samples see earlier
updates), so they cannot be vectorized; this is where the JIT pays off.

Run:
    python benchmarks/bench_kernels.py [--vertices 2000] [--samples 200000]

Force the fallback everywhere with TALENTRANK_NO_NUMBA=1 (this script
always times both implementations regardless of the flag).
"""

import argparse
import time

import numpy as np

from talentrank import _kernels


def make_inputs(n_vertices, n_samples, dim, negatives, seed=0):
    rng = np.random.RandomState(seed)
    emb = rng.uniform(-0.01, 0.01, (n_vertices, dim))
    src = rng.randint(0, n_vertices, size=n_samples).astype(np.int64)
    dst = rng.randint(0, n_vertices, size=n_samples).astype(np.int64)
    neg = rng.randint(0, n_vertices, size=(n_samples, negatives)).astype(np.int64)
    return emb, src, dst, neg


def time_fn(fn, emb, src, dst, neg, lr, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        work = emb.copy()
        start = time.perf_counter()
        fn(work, src, dst, neg, lr)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--vertices", type=int, default=2000)
    parser.add_argument("--samples", type=int, default=200_000)
    parser.add_argument("--dim", type=int, default=50)
    parser.add_argument("--negatives", type=int, default=5)
    args = parser.parse_args()

    emb, src, dst, neg = make_inputs(args.vertices, args.samples, args.dim, args.negatives)
    lr = 0.025

    try:
        from numba import njit

        jit_first = njit(cache=True)(_kernels._first_order_epoch_loop)
        jit_second = njit(cache=True)(_kernels._second_order_epoch_loop)
        # warm up: trigger compilation outside the timed region
        jit_first(emb.copy(), src[:10], dst[:10], neg[:10], lr)
        jit_second(emb.copy(), emb.copy(), src[:10], dst[:10], neg[:10], lr)
        have_numba = True
    except ImportError:
        have_numba = False
        print("numba not installed; timing the numpy fallback only")

    print(f"vertices={args.vertices} samples={args.samples} dim={args.dim} "
          f"negatives={args.negatives}")
    rows = []
    t_np = time_fn(_kernels._first_order_epoch_numpy, emb, src, dst, neg, lr)
    rows.append(("first_order", "numpy", t_np))
    if have_numba:
        t_nb = time_fn(jit_first, emb, src, dst, neg, lr)
        rows.append(("first_order", "numba", t_nb))
        rows.append(("first_order", "speedup", t_np / t_nb))
    ctx = emb.copy()
    t_np = time_fn(lambda e, s, d, n, r: _kernels._second_order_epoch_numpy(e, ctx.copy(), s, d, n, r),
                   emb, src, dst, neg, lr)
    rows.append(("second_order", "numpy", t_np))
    if have_numba:
        t_nb = time_fn(lambda e, s, d, n, r: jit_second(e, ctx.copy(), s, d, n, r),
                       emb, src, dst, neg, lr)
        rows.append(("second_order", "numba", t_nb))
        rows.append(("second_order", "speedup", t_np / t_nb))

    print(f"{'kernel':<14}{'path':<10}{'result'}")
    for kernel, path, value in rows:
        shown = f"{value:.3f} s" if path != "speedup" else f"{value:.1f}x"
        print(f"{kernel:<14}{path:<10}{shown}")


if __name__ == "__main__":
    main()
