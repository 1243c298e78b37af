"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the three hot paths (interpolation, semi-Lagrangian sweep, backward
characteristic density) on a mid-size cruise-control problem under both
backends and prints a timing table.

    python -m densyn.bench [--size small|medium] [--repeat N]
"""

import argparse
import time

import numpy as np

from densyn import kernels_numba, kernels_numpy
from densyn.density import DensityConfig, SourceSpec, stationary_density
from densyn.field import Box, build_grid
from densyn.hjb import HjbConfig, SweepOperator, intervention_cost_spec
from densyn.system import AccParams, acc_system, closed_loop_field, ConstantPolicy


SIZES = {
    "small": ([(0, 30, 11), (0, 30, 11), (0, 80, 15)], 5e-1),
    "medium": ([(0, 30, 21), (0, 30, 21), (0, 80, 27)], 2.0),
}


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(size: str = "small", repeat: int = 3) -> list:
    axes, density_tmax = SIZES[size]
    p = AccParams()
    sys = acc_system(p)
    grid = build_grid(axes)
    from densyn.baseline import LegacyPolicy, design_lqr

    legacy = LegacyPolicy(design_lqr(p), p)
    cost = intervention_cost_spec(legacy)
    op = SweepOperator(sys, cost, p.kappa, ConstantPolicy([0.0]), grid,
                       HjbConfig(n_samples=21))
    rng = np.random.default_rng(0)
    v = rng.normal(size=grid.num_nodes)
    pts = rng.uniform(grid.lo, grid.hi, size=(200_000, 3))
    ga = op._ga
    clf = closed_loop_field(sys, legacy, ConstantPolicy([-p.a_max]))
    src = SourceSpec(box=Box([11, 11, 30], [15, 15, 60]), amplitude=1.0)
    dcfg = DensityConfig(dt=0.05, t_max=density_tmax)

    rows = []
    for kern, name in ((kernels_numba, "numba"), (kernels_numpy, "numpy")):
        kern.warmup()
        t_interp = _time(lambda: kern.interp_many(v, pts, *ga), repeat)
        t_sweep = _time(
            lambda: kern.sl_sweep(v, *ga, op.adv, op.cost, op.uvals0,
                                  op.gamma, op.cost_w, False, op.group),
            repeat)
        import os
        os.environ["DENSYN_BACKEND"] = name
        try:
            t_density = _time(
                lambda: stationary_density(clf, src, p.kappa, grid, dcfg), 1)
        finally:
            os.environ.pop("DENSYN_BACKEND", None)
        rows.append({"backend": name, "interp_200k": t_interp,
                     "hjb_sweep": t_sweep, "density": t_density})
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", choices=sorted(SIZES), default="small")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rows = run(args.size, args.repeat)
    cols = ("interp_200k", "hjb_sweep", "density")
    print(f"{'backend':<8}" + "".join(f"{c:>14}" for c in cols))
    for r in rows:
        print(f"{r['backend']:<8}" + "".join(f"{r[c] * 1e3:>12.2f}ms" for c in cols))
    a, b = rows
    print("speedup " + "".join(f"{b[c] / max(a[c], 1e-12):>13.1f}x" for c in cols))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
