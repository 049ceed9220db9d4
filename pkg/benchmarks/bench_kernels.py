#!/usr/bin/env python3
"""Benchmark the numba-compiled kernels against their pure-numpy twins.

The dispatch in nerflab.kernels is frozen at import time via the
NERFLAB_NO_NUMBA environment variable, so both paths are reached directly
through the private twin functions instead of re-importing the module.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from nerflab import kernels as K


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm-up (triggers JIT compilation on the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def check_close(a, b, name, atol=1e-10):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, atol=atol, err_msg=name)


def bench(repeats):
    rng = np.random.default_rng(0)
    rows = []

    # integrated positional encoding tables: (rays*samples, 3) x L levels
    mu = rng.normal(size=(65536, 3))
    var = rng.uniform(0.0, 0.1, size=(65536, 3))
    scales = 2.0 ** np.arange(8).astype(np.float64)
    rows.append(("ipe_tables", K._ipe_tables_nb, K._ipe_tables_np, (mu, var, scales)))

    # fused softplus/sigmoid over a training batch of trunk activations
    x = np.ascontiguousarray(rng.normal(scale=3.0, size=(1 << 21,)))
    rows.append(("softplus_pair", lambda v: K._softplus_pair_nb(v),
                 lambda v: K._softplus_pair_np(v), (x,)))

    # dense ray marching as used by the oracle renderer
    n, m = 1024, 2048
    sigma = rng.uniform(0.0, 5.0, size=(n, m))
    delta = np.full((n, m), 4.0 / m)
    rgb = rng.uniform(size=(n, m, 3))
    t_mid = np.broadcast_to(np.linspace(2.0, 6.0, m), (n, m)).copy()
    bg = np.ones(3)
    rows.append(("raymarch", K._raymarch_nb, K._raymarch_np,
                 (sigma, delta, rgb, t_mid, 6.0, bg)))

    # analytic scene density over a large point batch
    pts = rng.uniform(-2.0, 2.0, size=(1 << 20, 3))
    kinds = np.array([0, 0, 1], dtype=np.int64)
    centers = np.array([[0.0, 0.0, 0.0], [0.8, 0.0, 0.3], [0.0, 0.0, -0.5]])
    sizes = np.array([[1.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.2, 1.2, 0.2]])
    dens = np.array([10.0, 8.0, 12.0])
    albedo = rng.uniform(size=(3, 3))
    falloff = np.full(3, 0.1)
    rows.append(("scene_density_batch", K._scene_density_nb, K._scene_density_np,
                 (pts, kinds, centers, sizes, dens, albedo, falloff)))

    print(f"{'kernel':<22}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for name, f_nb, f_np, args in rows:
        out_nb = f_nb(*args)
        out_np = f_np(*args)
        if name == "softplus_pair":  # numba twin returns flat arrays
            out_nb = tuple(o.reshape(args[0].shape) for o in out_nb)
        check_close(out_nb, out_np, name)
        t_nb = timeit(f_nb, *args, repeats=repeats)
        t_np = timeit(f_np, *args, repeats=repeats)
        print(f"{name:<22}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>9.1f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if not K.USE_NUMBA:
        raise SystemExit(
            "numba path unavailable (NERFLAB_NO_NUMBA set or numba missing); "
            "nothing to compare"
        )
    bench(args.repeats)


if __name__ == "__main__":
    main()
