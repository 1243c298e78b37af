"""Cost-vs-alpha bars with the synthesized controller as a reference line.

Usage: densyn-plot-alpha --csv fig2b_alpha_sweep.csv --out fig2b
"""

import argparse
import sys

from densyn_plots.schema import SchemaError, floats, read_rows
from densyn_plots.style import new_figure, save_both

REQUIRED = ("alpha", "controller", "cost")


def render(csv_path, out_base):
    rows = read_rows(csv_path, REQUIRED)
    cbf = [r for r in rows if r["controller"] == "cbf"]
    dens = [r for r in rows if r["controller"] == "density"]
    if not cbf:
        raise SchemaError("controller", "no 'cbf' rows")
    if len(dens) != 1:
        raise SchemaError("controller", f"expected one 'density' row, got {len(dens)}")
    alphas = floats(cbf, "alpha")
    costs = floats(cbf, "cost")
    ref = floats(dens, "cost")[0]
    fig = new_figure()
    ax = fig.subplots()
    xs = list(range(len(alphas)))
    ax.bar(xs, costs, color="tab:blue", label="CBF filter")
    ax.axhline(ref, color="tab:red", linestyle="-", linewidth=2,
               label="density-synthesized")
    ax.set_xticks(xs)
    ax.set_xticklabels([f"{a:g}" for a in alphas])
    ax.set_xlabel("barrier gain alpha (1/s)")
    ax.set_ylabel("discounted intervention cost")
    ax.legend(loc="upper right")
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
