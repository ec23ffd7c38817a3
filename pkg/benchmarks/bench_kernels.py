"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Run with `python benchmarks/bench_kernels.py`.  Shapes mirror the default
training model; the last row is a full forward+backward conv step at the
training batch size.
"""

import argparse
import time

import numpy as np

from rblock import kernels
from rblock.kernels import pykernels

try:
    from rblock.kernels import _ckernels
except ImportError:
    _ckernels = None


SHAPES = [
    # (batch, c_in, h, w, c_out, kernel)
    (64, 1, 16, 16, 32, 3),
    (64, 32, 8, 8, 64, 3),
    (128, 3, 32, 32, 32, 3),
    (32, 64, 16, 16, 64, 3),
]


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def bench_backend(mod, repeats):
    rng = np.random.default_rng(0)
    rows = []
    for batch, c_in, h, w, c_out, k in SHAPES:
        x = rng.normal(size=(batch, c_in, h, w))
        wgt = rng.normal(size=(c_out, c_in, k, k))
        b = rng.normal(size=c_out)
        g = rng.normal(size=(batch, c_out, h, w))
        fwd = _time(lambda: mod.conv2d_forward(x, wgt, b, 1, 1), repeats)
        bwd = _time(lambda: mod.conv2d_backward(x, wgt, g, 1, 1), repeats)
        rows.append((f"{batch}x{c_in}x{h}x{w} -> {c_out}", fwd, bwd))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5,
                        help="repetitions per measurement (best-of)")
    args = parser.parse_args()

    print(f"active backend: {kernels.BACKEND}")
    backends = [("python", pykernels)]
    if _ckernels is not None:
        backends.append(("cython", _ckernels))
    else:
        print("compiled extension not built; benchmarking the fallback only")

    results = {name: bench_backend(mod, args.repeats) for name, mod in backends}
    header = f"{'shape':<24}"
    for name in results:
        header += f"{name + ' fwd (ms)':>16}{name + ' bwd (ms)':>16}"
    print(header)
    for i, (label, _, _) in enumerate(results[backends[0][0]]):
        line = f"{label:<24}"
        for name in results:
            _, fwd, bwd = results[name][i]
            line += f"{fwd:>16.2f}{bwd:>16.2f}"
        print(line)

    if len(results) == 2:
        py = results["python"]
        cy = results["cython"]
        speedup_f = np.mean([p[1] / c[1] for p, c in zip(py, cy)])
        speedup_b = np.mean([p[2] / c[2] for p, c in zip(py, cy)])
        print(f"\nmean speedup (python/cython): forward {speedup_f:.2f}x, "
              f"backward {speedup_b:.2f}x")


if __name__ == "__main__":
    main()
