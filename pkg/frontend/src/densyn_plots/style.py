"""Deterministic matplotlib output: stable ids, no timestamps, fixed sizes.

SVG text must diff clean against the committed goldens, so everything that
could vary run-to-run (hash salt, date metadata, font discovery) is pinned.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "svg.hashsalt": "densyn-plots",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def new_figure(figsize=None):
    plt.rcdefaults()
    matplotlib.rcParams.update(RC)
    fig = plt.figure(figsize=figsize or RC["figure.figsize"])
    return fig


def save_both(fig, out_base) -> tuple:
    """Write <base>.svg and <base>.png; returns the two paths."""
    base = Path(out_base)
    if base.suffix in (".svg", ".png"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    svg = base.with_suffix(".svg")
    png = base.with_suffix(".png")
    fig.savefig(svg, format="svg", metadata={"Date": None})
    fig.savefig(png, format="png")
    plt.close(fig)
    return svg, png
