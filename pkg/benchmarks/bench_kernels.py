"""Benchmark the compiled recognition-cell kernels against the numpy fallback.

Runs the batched forward and backward passes at a few representative sizes
(batch 256, five relation cells) and prints per-call times plus speedup.

Usage: python benchmarks/bench_kernels.py [--batch 256] [--cells 5] [--repeats 50]
"""

import argparse
import time

import numpy as np

from lexrel._kernels import _cell_np

try:
    from lexrel._kernels import _cell_cy
except ImportError:
    _cell_cy = None


def make_case(rng, batch, d, cells):
    x = rng.standard_normal((batch, d))
    y = rng.standard_normal((batch, d))
    protos = rng.standard_normal((cells, d))
    ws = [rng.standard_normal(s) * 0.1 for s in ((2 * d, d), (2 * d, d), (d, d), (d, d))]
    bs = [rng.standard_normal(d) * 0.1 for _ in range(4)]
    du3 = rng.standard_normal((cells, batch, d))
    du4 = rng.standard_normal((cells, batch, d))
    return x, y, protos, ws, bs, du3, du4


def time_call(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench(batch, cells, dims, repeats):
    rng = np.random.default_rng(0)
    print(f"batch={batch} cells={cells} repeats={repeats}")
    print(f"{'d':>5} {'pass':>9} {'numpy (ms)':>12} {'cython (ms)':>12} {'speedup':>8}")
    for d in dims:
        x, y, protos, ws, bs, du3, du4 = make_case(rng, batch, d, cells)
        fwd_args = (x, y, protos, *ws, *bs)
        u = _cell_np.cell_forward(*fwd_args)
        bwd_args = (x, y, protos, *ws, *u, du3, du4)

        for name, args, np_fn, cy_fn in (
            ("forward", fwd_args, _cell_np.cell_forward,
             _cell_cy.cell_forward if _cell_cy else None),
            ("backward", bwd_args, _cell_np.cell_backward,
             _cell_cy.cell_backward if _cell_cy else None),
        ):
            t_np = time_call(lambda: np_fn(*args), repeats)
            if cy_fn is None:
                print(f"{d:>5} {name:>9} {t_np * 1e3:>12.3f} {'n/a':>12} {'n/a':>8}")
                continue
            t_cy = time_call(lambda: cy_fn(*args), repeats)
            out_np, out_cy = np_fn(*args), cy_fn(*args)
            for a, b in zip(out_np, out_cy):
                np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-11)
            print(f"{d:>5} {name:>9} {t_np * 1e3:>12.3f} {t_cy * 1e3:>12.3f} "
                  f"{t_np / t_cy:>7.2f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--cells", type=int, default=5)
    ap.add_argument("--dims", type=int, nargs="+", default=[16, 64, 256, 768])
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args()
    if _cell_cy is None:
        print("compiled kernel not available; timing the numpy fallback only")
    bench(args.batch, args.cells, args.dims, args.repeats)


if __name__ == "__main__":
    main()
