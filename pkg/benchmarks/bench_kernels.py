"""Time the numba and numpy kernel backends on simulator-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Reports the best wall time per kernel and backend, plus the speedup. The
first numba call (compilation, or loading the on-disk cache) is excluded.
"""
import argparse
import time

import numpy as np

from overmind.machine import kernels


def best_of(fn, args, repeat):
    fn(*args)  # warm-up / JIT
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    # 32 row windows over a [256, 256] operand
    shape, strides = (256, 256), (256, 1)
    addrs = np.arange(256 * 256, dtype=np.int64)
    win = np.array([[0, r, r, 0, 255, 0, 0] for r in range(32)], dtype=np.int64)
    yield "accept_matrix 32x65536", 0, (addrs, win, shape, strides)

    n = 256
    a = rng.normal(size=n)
    values = rng.normal(size=n)
    yield ("circ_conv_rows N=256", 1,
           (np.arange(n), values, np.ones((n, n), bool), np.arange(n) % n, n, a))

    x = rng.uniform(-8, 8, 1 << 16)
    yield "pade_eval k=6 65536 elems", 2, (rng.normal(size=7), rng.normal(size=6) * 0.1, x)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "numba" not in backends:
        print("numba not installed; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}" + "".join(f"{b:>12}" for b in backends) + "     speedup")
    for name, slot, kargs in cases(rng):
        t = {b: best_of(kernels.kernels(b)[slot], kargs, args.repeat) for b in backends}
        row = f"{name:<28}" + "".join(f"{t[b] * 1e3:>10.3f}ms" for b in backends)
        if "numba" in t:
            row += f"  {t['numpy'] / t['numba']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
