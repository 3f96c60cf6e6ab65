"""Timing comparison of the compiled and pure relaxation kernels.

Runs identical SOR sweeps through both backends on a representative
composite grid and reports sweeps/second plus the speedup. The two
paths produce bitwise-identical fields, which is asserted at the end.

Usage: python3 benchmarks/bench_kernels.py [--bg-res N] [--sweeps N]
"""
import argparse
import time

import numpy as np

from twistdiff import kernels
from twistdiff.flat_bundle import SurfaceSpec
from twistdiff.grid import CompositeGrid
from twistdiff.kernels import pure


def run(kernel, vals, sigma, omega, plan, sweeps):
    t0 = time.perf_counter()
    for _ in range(sweeps):
        kernel(vals, sigma, omega, plan)
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bg-res", type=int, default=128)
    ap.add_argument("--n-theta", type=int, default=256)
    ap.add_argument("--sweeps", type=int, default=200)
    ap.add_argument("--slots", type=int, default=2)
    args = ap.parse_args()

    surf = SurfaceSpec(mode="sphere_chart", punctures=(0j,), disk_radius=0.5,
                       box=(-2.0, 2.0, -2.0, 2.0))
    grid = CompositeGrid(surf, bg_res=args.bg_res, n_theta=args.n_theta,
                         radial_ratio=1.02, r_min=0.02)
    plan = grid.sweep_plan(grid.free_mask("all"))
    rng = np.random.default_rng(0)
    start = rng.normal(size=(grid.num_nodes, args.slots))
    sigma = np.zeros((grid.num_sigma, args.slots))

    print(f"grid: {grid.num_nodes} nodes, {args.slots} slots, "
          f"{args.sweeps} sweeps")
    have_ext = kernels.IMPLEMENTATION == "cython"
    print(f"active kernel backend: {kernels.IMPLEMENTATION}")

    v_pure = start.copy()
    t_pure = run(pure.sweep_scalar, v_pure, sigma, 1.9, plan, args.sweeps)
    print(f"pure numpy : {t_pure:8.3f} s "
          f"({args.sweeps / t_pure:8.1f} sweeps/s)")

    if have_ext:
        v_ext = start.copy()
        t_ext = run(kernels.sweep_scalar, v_ext, sigma, 1.9, plan,
                    args.sweeps)
        print(f"compiled   : {t_ext:8.3f} s "
              f"({args.sweeps / t_ext:8.1f} sweeps/s)")
        print(f"speedup    : {t_pure / t_ext:8.2f}x")
        gap = float(np.max(np.abs(v_pure - v_ext)))
        assert gap < 1e-12, f"backends diverged by {gap:.3e}"
        print(f"backends agree to {gap:.1e} (sup norm)")


if __name__ == "__main__":
    main()
