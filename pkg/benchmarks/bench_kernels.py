"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --size 64 --repeat 5
"""

import argparse
import timeit

import numpy as np

from mvq._backend import available_backends


def bench(size, k, channels, iterations, repeat):
    rng = np.random.default_rng(0)
    data = rng.uniform(0, 1, (channels, size, size))
    Ix, Iy, It = rng.normal(size=(3, size, size))
    rows = []
    for name, mod in sorted(available_backends().items()):
        t_patch = min(timeit.repeat(lambda: mod.patch_matrix(data, k), number=1, repeat=repeat))
        t_hs = min(timeit.repeat(lambda: mod.hs_iterate(Ix, Iy, It, 0.01, iterations), number=1, repeat=repeat))
        rows.append((name, t_patch, t_hs))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--channels", type=int, default=3)
    ap.add_argument("--iterations", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args(argv)
    rows = bench(a.size, a.k, a.channels, a.iterations, a.repeat)
    print(f"{'backend':<8} {'patch_matrix [ms]':>18} {'hs_iterate [ms]':>16}")
    for name, tp, th in rows:
        print(f"{name:<8} {1e3 * tp:>18.3f} {1e3 * th:>16.3f}")
    if len(rows) == 2:
        (_, cp, ch), (_, pp, ph) = rows
        print(f"speed-up  {pp / cp:>17.1f}x {ph / ch:>15.1f}x")


if __name__ == "__main__":
    main()
