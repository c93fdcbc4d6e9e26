"""Compare the compiled matmul/bmm kernels against the numpy fallback.

Both backends promise identical bits (fixed k-ascending accumulation),
so this script first cross-checks outputs with array_equal and then
times each backend on square matmuls and attention-shaped bmms. Run it
from a checkout where the extension built:

    python3 benchmarks/kernel_bench.py --repeats 5
"""

import argparse
import sys
import time

import numpy as np

from newvision.kernels import _core, numpy_backend


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_matmul(backend, n, dtype, repeats):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((n, n)).astype(dtype)
    b = rng.standard_normal((n, n)).astype(dtype)
    out = np.zeros((n, n), dtype=dtype)
    return _time(lambda: backend.matmul(a, b, out), repeats), out


def bench_bmm(backend, batch, n, dtype, repeats):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((batch, n, n)).astype(dtype)
    b = rng.standard_normal((batch, n, n)).astype(dtype)
    out = np.zeros((batch, n, n), dtype=dtype)
    return _time(lambda: backend.bmm(a, b, out), repeats), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[32, 64, 128, 256])
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args(argv)

    if _core is None:
        print("compiled extension is not importable; nothing to compare",
              file=sys.stderr)
        return 1

    header = f"{'case':<22}{'numpy':>12}{'cython':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for dtype in (np.float32, np.float64):
        tag = np.dtype(dtype).name
        for n in args.sizes:
            t_np, out_np = bench_matmul(numpy_backend, n, dtype,
                                        args.repeats)
            t_cy, out_cy = bench_matmul(_core, n, dtype, args.repeats)
            if not np.array_equal(out_np, out_cy):
                print(f"matmul {tag} {n}: BACKENDS DISAGREE", file=sys.stderr)
                return 1
            print(f"{f'matmul {tag} {n}x{n}':<22}{t_np * 1e3:>10.2f}ms"
                  f"{t_cy * 1e3:>10.2f}ms{t_np / t_cy:>9.1f}x")
        n = args.sizes[len(args.sizes) // 2]
        t_np, out_np = bench_bmm(numpy_backend, args.batch, n, dtype,
                                 args.repeats)
        t_cy, out_cy = bench_bmm(_core, args.batch, n, dtype, args.repeats)
        if not np.array_equal(out_np, out_cy):
            print(f"bmm {tag}: BACKENDS DISAGREE", file=sys.stderr)
            return 1
        print(f"{f'bmm {tag} {args.batch}x{n}':<22}{t_np * 1e3:>10.2f}ms"
              f"{t_cy * 1e3:>10.2f}ms{t_np / t_cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
