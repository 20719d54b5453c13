"""Time the compiled and pure-numpy server window integrators.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from fedecado import kernels


def problem(K, d, dense, seed=0):
    rng = np.random.default_rng(seed)
    if dense:
        B = rng.normal(size=(K, d, d))
        R = np.einsum("kij,klj->kil", B, B) / d + 0.05 * np.eye(d)
    else:
        R = rng.uniform(0.05, 2.0, (K, d))
    return (rng.normal(size=d), rng.normal(size=(K, d)), np.zeros((K, d)), R,
            rng.uniform(1e-3, 1.0, (K, d)), rng.normal(size=(K, d)), 0.1 * rng.normal(size=(K, d)),
            5.0, 0.1, 1e-4, 2.0, 30, 200000, 1e12)


def best_of(fn, args, repeat):
    out, times = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), len(out[2])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = [n for n in ("python", "compiled") if n in kernels.BACKENDS]
    print(f"{'case':<22}{'steps':>7}" + "".join(f"{n + ' ms':>14}" for n in names) + f"{'speedup':>10}")
    for K, d, dense in ((8, 10, False), (8, 100, False), (16, 1000, False), (8, 10, True), (4, 32, True)):
        case = problem(K, d, dense)
        res = {n: best_of(kernels.BACKENDS[n].integrate_window, case, args.repeat) for n in names}
        steps = res[names[0]][1]
        row = f"{f'K={K} d={d} ' + ('dense' if dense else 'diag'):<22}{steps:>7}"
        row += "".join(f"{1000 * res[n][0]:>14.2f}" for n in names)
        if len(names) == 2:
            row += f"{res['python'][0] / res['compiled'][0]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
