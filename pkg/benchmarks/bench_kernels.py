"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N time for each backend and the
speedup. The compiled column is skipped when the extension is not built.
"""
import argparse
import timeit

import numpy as np

from lowrank_wd import _fallback

try:
    from lowrank_wd import _kernels
except ImportError:
    _kernels = None


def jacobi_case(rows, cols, seed=0):
    a = np.random.default_rng(seed).normal(size=(rows, cols))
    w0 = np.ascontiguousarray(a.T if rows >= cols else a)

    def run(mod):
        w = w0.copy()
        mod.jacobi_sweeps(w, 1e-12, 100)
    return run


def epoch_case(m, n, N, B, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=m) * np.sqrt(2 / m)
    v = rng.normal(size=(m, n)) * np.sqrt(2 / n)
    b = np.zeros(m)
    x = rng.normal(size=(N, n))
    y = rng.normal(size=N)
    g = np.ones(N)
    order = rng.permutation(N).astype(np.int_)

    def run(mod):
        mod.sgd_epoch(u.copy(), v.copy(), b.copy(), x, y, g, order, B, 1e-4, 1e-4, 1e-4)
    return run


CASES = {
    "jacobi 256x8": jacobi_case(256, 8),
    "jacobi 64x64": jacobi_case(64, 64),
    "jacobi 8192x8": jacobi_case(8192, 8),
    "sgd epoch m=256 n=8 N=512 B=16": epoch_case(256, 8, 512, 16),
    "sgd epoch m=1024 n=8 N=1800 B=16": epoch_case(1024, 8, 1800, 16),
    "sgd epoch m=512 n=784 N=1024 B=64": epoch_case(512, 784, 1024, 64),
}


def best(fn, mod, repeat):
    number = 1
    while timeit.timeit(lambda: fn(mod), number=number) < 0.2 and number < 10_000:
        number *= 2
    return min(timeit.repeat(lambda: fn(mod), number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<36} {'numpy':>12} {'compiled':>12} {'speedup':>8}")
    for name, fn in CASES.items():
        t_py = best(fn, _fallback, args.repeat)
        if _kernels is None:
            print(f"{name:<36} {t_py * 1e3:>10.3f}ms {'n/a':>12} {'':>8}")
            continue
        t_c = best(fn, _kernels, args.repeat)
        print(f"{name:<36} {t_py * 1e3:>10.3f}ms {t_c * 1e3:>10.3f}ms {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
