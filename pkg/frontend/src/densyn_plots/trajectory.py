"""Time-series panels (lead speed, ego speed, gap) from a trajectory CSV.

Usage: densyn-plot-trajectory --csv fig2a_trajectory.csv --out fig2a
Writes fig2a.svg and fig2a.png; the gap panel carries the safety floor.
"""

import argparse
import sys

from densyn_plots.schema import SchemaError, floats, read_rows
from densyn_plots.style import new_figure, save_both

REQUIRED = ("t", "v_l", "v", "D", "d_min")


def render(csv_path, out_base):
    rows = read_rows(csv_path, REQUIRED)
    t = floats(rows, "t")
    v_l = floats(rows, "v_l")
    v = floats(rows, "v")
    D = floats(rows, "D")
    d_min = floats(rows, "d_min")[0]
    fig = new_figure(figsize=(6.0, 6.0))
    axes = fig.subplots(3, 1, sharex=True)
    marker = "o" if len(t) == 1 else None
    axes[0].plot(t, v_l, color="tab:blue", marker=marker)
    axes[0].set_ylabel("lead speed (m/s)")
    axes[1].plot(t, v, color="tab:orange", marker=marker)
    axes[1].set_ylabel("ego speed (m/s)")
    axes[2].plot(t, D, color="tab:green", marker=marker)
    axes[2].axhline(d_min, color="tab:red", linestyle="--", label="gap floor")
    axes[2].set_ylabel("gap (m)")
    axes[2].set_xlabel("time (s)")
    axes[2].legend(loc="upper right")
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
