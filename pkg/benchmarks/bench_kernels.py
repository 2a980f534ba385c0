"""Numba vs pure-numpy timings for the two hot kernels.

    python3 benchmarks/bench_kernels.py [--sizes 9,50,125] [--repeat 3]

Both backends are importable in one process regardless of SPECTRAJ_DISABLE_NUMBA;
the flag only chooses which one the package dispatches to.
"""
import argparse
import time

import numpy as np

from spectraj import _kernels
from spectraj.graph import build_path_graph


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_jacobi(n, repeat):
    lap = build_path_graph(n).laplacian
    row = {"kernel": f"jacobi path({n})"}
    for name, fn in (("numpy", _kernels.jacobi_eigh_numpy), ("numba", getattr(_kernels, "jacobi_eigh_numba", None))):
        if fn is None or (name == "numba" and not _kernels.NUMBA_AVAILABLE):
            row[name] = float("nan")
            continue
        fn(lap.copy())  # compile / warm up
        row[name] = best_of(lambda: fn(lap.copy()), repeat)
    return row


def bench_adam(size, repeat, steps=20):
    rng = np.random.default_rng(0)
    g = rng.normal(size=size)
    row = {"kernel": f"adam x{steps} ({size:,} params)"}
    for name, fn in (("numpy", _kernels.adam_step_numpy), ("numba", getattr(_kernels, "adam_step_numba", None))):
        if fn is None or (name == "numba" and not _kernels.NUMBA_AVAILABLE):
            row[name] = float("nan")
            continue
        p, m, v = np.zeros(size), np.zeros(size), np.zeros(size)

        def run():
            for _ in range(steps):
                fn(p, g, m, v, 1e-4, 0.9, 0.999, 1e-8, 0.5, 0.5)

        fn(p, g, m, v, 1e-4, 0.9, 0.999, 1e-8, 0.5, 0.5)
        row[name] = best_of(run, repeat)
    return row


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="9,50,125", help="path graph sizes for the eigensolver")
    ap.add_argument("--adam-sizes", default="100000,1000000")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rows = [bench_jacobi(int(n), args.repeat) for n in args.sizes.split(",")]
    rows += [bench_adam(int(n), args.repeat) for n in args.adam_sizes.split(",")]
    print(f"dispatching backend: {_kernels.backend_name()}")
    print(f"{'kernel':<34}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for r in rows:
        speed = r["numpy"] / r["numba"] if r["numba"] == r["numba"] else float("nan")
        print(f"{r['kernel']:<34}{r['numpy']:>12.4f}{r['numba']:>12.4f}{speed:>9.1f}x")


if __name__ == "__main__":
    main()
