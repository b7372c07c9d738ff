"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--points 20000] [--repeats 5]

The first numba call includes JIT compilation (or a cache load) and is
reported separately; steady-state numbers are the best of ``--repeats``.
Outputs of the two paths are compared before any timing is printed.
"""
import argparse
import time

import numpy as np

from pcqa import kernels
from pcqa.features import knn_indices
from pcqa.svr import fit_standardizer, rbf_kernel


def _best(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def _first(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


def cases(n_points, rng):
    p = rng.normal(size=(n_points, 3)) * [1.0, 0.5, 0.2]
    nbrs = knn_indices(p, 20)
    yield ("eigen k=20", lambda: kernels.neighborhood_eigenvalues_numpy(p, nbrs),
           lambda: kernels.neighborhood_eigenvalues_numba(p, nbrs), 1e-10)

    res, radius = 1024, 2
    cols = rng.integers(0, res, n_points)
    rows = rng.integers(0, res, n_points)
    near = rng.normal(size=n_points)
    colors = rng.integers(0, 256, (n_points, 3)).astype(np.uint8)
    bg = (255, 255, 255)
    yield ("splat 1024px r=2", lambda: kernels.splat_numpy(cols, rows, near, colors, res, radius, bg),
           lambda: kernels.splat_numba(cols, rows, near, colors, res, radius, bg), 0)

    X = rng.normal(size=(200, 17))
    y = X[:, 0] * 20 + rng.normal(0, 1, 200)
    Z = fit_standardizer(X).transform(X)
    K = rbf_kernel(Z, Z, 1 / 17)
    yield ("smo n=200 C=100", lambda: kernels.smo_numpy(K, y, 100.0, 0.1, 1e-3, 2_000_000)[0],
           lambda: kernels.smo_numba(K, y, 100.0, 0.1, 1e-3, 2_000_000)[0], 1e-8)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        print("numba unavailable (or PCQA_DISABLE_NUMBA set): both columns run the fallback")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18} {'numpy s':>10} {'numba s':>10} {'speedup':>8} {'first call s':>13}  agree")
    for name, f_np, f_nb, atol in cases(args.points, rng):
        out_nb, first = _first(f_nb)
        out_np = f_np()
        agree = np.allclose(out_np, out_nb, atol=atol, rtol=0) if atol else np.array_equal(out_np, out_nb)
        t_np = _best(f_np, args.repeats)
        t_nb = _best(f_nb, args.repeats)
        print(f"{name:<18} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x {first:>13.3f}  {agree}")


if __name__ == "__main__":
    main()
