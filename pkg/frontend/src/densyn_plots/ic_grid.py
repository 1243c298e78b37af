"""Heatmap of cost difference (CBF minus density) over initial conditions.

Usage: densyn-plot-ic --csv fig2c_grid_sweep.csv --out fig2c
Cells where either controller is unsafe or infeasible are masked out.
"""

import argparse
import sys

import numpy as np

from densyn_plots.schema import SchemaError, bools, floats, read_rows
from densyn_plots.style import new_figure, save_both

REQUIRED = ("v0", "D0", "b0", "feasible", "cost_density", "cost_cbf",
            "ok_density", "ok_cbf")


def render(csv_path, out_base):
    rows = read_rows(csv_path, REQUIRED)
    v0 = floats(rows, "v0")
    D0 = floats(rows, "D0")
    feas = bools(rows, "feasible")
    vs = sorted(set(v0))
    ds = sorted(set(D0))
    if len(vs) * len(ds) != len(rows):
        raise SchemaError("v0", "initial conditions do not form a rectangular grid")
    diff = np.full((len(ds), len(vs)), np.nan)
    for i, row in enumerate(rows):
        r = ds.index(D0[i])
        c = vs.index(v0[i])
        if not np.isnan(diff[r, c]):
            raise SchemaError("D0", "duplicate grid point")
        if feas[i] and row["ok_density"] == "true" and row["ok_cbf"] == "true":
            diff[r, c] = float(row["cost_cbf"]) - float(row["cost_density"])
    fig = new_figure()
    ax = fig.subplots()
    masked = np.ma.masked_invalid(diff)
    vmax = float(abs(masked).max()) if masked.count() else 1.0
    vmax = vmax if vmax > 0 else 1.0
    im = ax.pcolormesh(vs, ds, masked, cmap="RdBu_r", vmin=-vmax, vmax=vmax,
                       shading="nearest")
    fig.colorbar(im, ax=ax, label="CBF cost - density cost")
    ax.set_xlabel("initial ego speed (m/s)")
    ax.set_ylabel("initial gap (m)")
    fig.tight_layout()
    return save_both(fig, out_base)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--csv", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    try:
        svg, png = render(args.csv, args.out)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {svg} and {png}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
