"""Rectilinear grids, scalar fields, and the functionals built on them.

A ``Grid`` is a tensor product of uniformly spaced axes; a ``GridField`` is a
flat float64 array over its nodes (C order, first axis slowest).  Multilinear
interpolation with clamp-to-box semantics turns a field into a continuous
function of the state; the trapezoidal inner product and region sup-norm are
the two functionals the solvers need.

Fields are immutable by convention after construction: every consumer treats
``values`` as read-only, which makes concurrent reads safe.
"""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from densyn.backend import get_kernels


class GridError(ValueError):
    """Invalid grid construction or grid mismatch between operands."""


@dataclass(frozen=True)
class Grid:
    """Uniform rectilinear grid: per-axis (lo, hi, count) with count >= 2."""

    lo: np.ndarray
    hi: np.ndarray
    count: np.ndarray  # int64, nodes per axis

    @property
    def ndim(self) -> int:
        return self.lo.shape[0]

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (self.count - 1)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.count))

    @property
    def strides(self) -> np.ndarray:
        """Flat-index stride per axis (C order)."""
        s = np.ones(self.ndim, dtype=np.int64)
        for k in range(self.ndim - 2, -1, -1):
            s[k] = s[k + 1] * self.count[k + 1]
        return s

    def axis_coords(self, k: int) -> np.ndarray:
        return self.lo[k] + self.spacing[k] * np.arange(self.count[k])

    def nodes(self) -> np.ndarray:
        """All node coordinates as an (N, ndim) array in flat order."""
        axes = [self.axis_coords(k) for k in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def clamp(self, x: np.ndarray) -> np.ndarray:
        """Clamp points (…, ndim) to the bounding box, per axis."""
        return np.clip(x, self.lo, self.hi)

    def refine(self) -> "Grid":
        """Grid with doubled resolution (count -> 2*count - 1), same box."""
        return build_grid(
            [(self.lo[k], self.hi[k], 2 * int(self.count[k]) - 1) for k in range(self.ndim)]
        )

    def axes_spec(self) -> list:
        return [
            {"lo": float(self.lo[k]), "hi": float(self.hi[k]), "count": int(self.count[k])}
            for k in range(self.ndim)
        ]

    def same_as(self, other: "Grid") -> bool:
        return (
            self.ndim == other.ndim
            and np.array_equal(self.count, other.count)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )


def build_grid(axes) -> Grid:
    """Build a grid from an iterable of (lo, hi, count) axis specs.

    Node coordinates along axis k are ``lo + j*h`` for j = 0..count-1 with
    ``h = (hi - lo)/(count - 1)``.
    """
    axes = list(axes)
    if not axes:
        raise GridError("grid needs at least one axis")
    lo = np.array([float(a[0]) for a in axes])
    hi = np.array([float(a[1]) for a in axes])
    count = np.array([int(a[2]) for a in axes], dtype=np.int64)
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        raise GridError("grid bounds must be finite")
    if (lo >= hi).any():
        raise GridError("grid requires lo < hi on every axis")
    if (count < 2).any():
        raise GridError("grid requires count >= 2 on every axis")
    return Grid(lo=lo, hi=hi, count=count)


@dataclass
class GridField:
    """Scalar field sampled on a grid; flat values in C order."""

    grid: Grid
    values: np.ndarray
    role: str = "field"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.shape[0] != self.grid.num_nodes:
            raise GridError(
                f"field length {self.values.shape[0]} != grid nodes {self.grid.num_nodes}"
            )
        if not np.isfinite(self.values).all():
            raise GridError("field values must be finite")

    def copy(self, role: str | None = None) -> "GridField":
        return GridField(self.grid, self.values.copy(), role or self.role)


def field_from_function(grid: Grid, fn, role: str = "field") -> GridField:
    """Sample ``fn`` over the grid nodes.

    ``fn`` may be vectorized (takes an (N, ndim) array) or scalar (takes a
    length-ndim vector); scalar callables are detected by trying the
    vectorized form first.
    """
    pts = grid.nodes()
    try:
        vals = np.asarray(fn(pts), dtype=np.float64)
        if vals.shape != (pts.shape[0],):
            raise TypeError
    except Exception:
        vals = np.array([float(fn(p)) for p in pts])
    return GridField(grid, vals, role)


# ---------------------------------------------------------------------------
# regions


class Region:
    """Deterministic membership test over states.

    Concrete regions are axis-aligned boxes and half-space intersections;
    arbitrary predicates are allowed for simulation-side checks only.
    """

    def contains(self, x: np.ndarray) -> bool:
        raise NotImplementedError

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        return np.array([self.contains(p) for p in np.atleast_2d(pts)], dtype=bool)


@dataclass(frozen=True)
class Box(Region):
    """Closed axis-aligned box lo <= x <= hi."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=np.float64)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=np.float64)))

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)


@dataclass(frozen=True)
class HalfSpace(Region):
    """Half-space ``normal . x <= offset`` (strict: < offset)."""

    normal: np.ndarray
    offset: float
    strict: bool = False

    def __post_init__(self):
        object.__setattr__(self, "normal", np.atleast_1d(np.asarray(self.normal, dtype=np.float64)))

    def contains(self, x) -> bool:
        v = float(np.dot(self.normal, np.atleast_1d(x)))
        return v < self.offset if self.strict else v <= self.offset

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(pts) @ self.normal
        return v < self.offset if self.strict else v <= self.offset


@dataclass(frozen=True)
class Intersection(Region):
    """Intersection of a list of regions (empty list = whole space)."""

    parts: tuple

    def contains(self, x) -> bool:
        return all(p.contains(x) for p in self.parts)

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        out = np.ones(pts.shape[0], dtype=bool)
        for p in self.parts:
            out &= p.contains_many(pts)
        return out


class PredicateRegion(Region):
    """Wraps an arbitrary predicate; for simulation-side checks only."""

    def __init__(self, fn):
        self.fn = fn

    def contains(self, x) -> bool:
        return bool(self.fn(np.atleast_1d(x)))


class EmptyRegion(Region):
    def contains(self, x) -> bool:
        return False

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        return np.zeros(np.atleast_2d(pts).shape[0], dtype=bool)


def indicator_field(grid: Grid, region: Region, role: str = "indicator") -> GridField:
    """Field that is 1.0 on nodes inside the region, 0.0 elsewhere."""
    mask = region.contains_many(grid.nodes())
    return GridField(grid, mask.astype(np.float64), role)


# ---------------------------------------------------------------------------
# interpolation


def _grid_arrays(grid: Grid):
    return (
        np.ascontiguousarray(grid.lo),
        np.ascontiguousarray(grid.spacing),
        np.ascontiguousarray(grid.count),
        np.ascontiguousarray(grid.strides),
    )


def interpolate_many(f: GridField, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of ``f`` at points (N, ndim).

    Points outside the bounding box are clamped per axis first.  Exact at
    nodes and exact for fields sampled from affine functions.
    """
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    if pts.shape[1] != f.grid.ndim:
        raise GridError(f"query dim {pts.shape[1]} != grid dim {f.grid.ndim}")
    if not np.isfinite(pts).all():
        raise ValueError("interpolation queries must be finite")
    lo, h, count, strides = _grid_arrays(f.grid)
    return get_kernels().interp_many(f.values, pts, lo, h, count, strides)


def interpolate(f: GridField, x) -> float:
    """Interpolate ``f`` at one state."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(interpolate_many(f, x[None, :])[0])


# ---------------------------------------------------------------------------
# quadrature and norms


def trapezoid_weights(grid: Grid) -> np.ndarray:
    """Tensor-product trapezoid weights: prod(h) interior, halved per
    incident boundary axis."""
    w = np.ones(1)
    for k in range(grid.ndim):
        wk = np.full(int(grid.count[k]), grid.spacing[k])
        wk[0] *= 0.5
        wk[-1] *= 0.5
        w = np.multiply.outer(w, wk)
    return w.ravel()


def inner_product(f: GridField, g: GridField) -> float:
    """<f, g> = integral of f*g over the grid box (trapezoid rule)."""
    if not f.grid.same_as(g.grid):
        raise GridError("inner_product requires both fields on one grid")
    w = trapezoid_weights(f.grid)
    return float(np.sum(f.values * g.values * w))


def _hat_overlap(coords: np.ndarray, h: float, a: float, b: float) -> np.ndarray:
    """Integral of each P1 hat basis function over [a, b].

    The hat at node x_k is supported on [x_k - h, x_k + h] (clipped to the
    axis) with unit peak; summing hat integrals times node values gives the
    exact integral of the piecewise-linear interpolant over [a, b].
    """

    def ramp_up(alpha, beta, x0):
        # integral of (x - x0)/h over [alpha, beta]
        return ((beta - x0) ** 2 - (alpha - x0) ** 2) / (2.0 * h)

    w = np.zeros(coords.shape[0])
    if b <= a:
        return w
    for k, xk in enumerate(coords):
        if k > 0:  # rising side, hat = (x - (xk - h))/h on [xk - h, xk]
            left_lo = max(a, xk - h)
            left_hi = min(b, xk)
            if left_hi > left_lo:
                w[k] += ramp_up(left_lo, left_hi, xk - h)
        if k < coords.shape[0] - 1:  # falling side, hat = ((xk + h) - x)/h
            right_lo = max(a, xk)
            right_hi = min(b, xk + h)
            if right_hi > right_lo:
                w[k] -= ramp_up(right_lo, right_hi, xk + h)
    return w


def box_quadrature_weights(grid: Grid, lo_box, hi_box) -> np.ndarray:
    """Per-node weights integrating the multilinear interpolant over a box.

    The box is clipped to the grid; the result is a tensor product of
    per-axis hat overlaps, so sum(w * values) equals the exact integral of
    the interpolated field over box-intersect-grid.
    """
    lo_box = np.atleast_1d(np.asarray(lo_box, dtype=np.float64))
    hi_box = np.atleast_1d(np.asarray(hi_box, dtype=np.float64))
    w = np.ones(1)
    for k in range(grid.ndim):
        a = max(float(lo_box[k]), float(grid.lo[k]))
        b = min(float(hi_box[k]), float(grid.hi[k]))
        wk = _hat_overlap(grid.axis_coords(k), float(grid.spacing[k]), a, b)
        w = np.multiply.outer(w, wk)
    return w.ravel()


def sup_norm_on(f: GridField, region: Region) -> float:
    """max |f| over grid nodes inside the region; 0.0 if none are inside."""
    mask = region.contains_many(f.grid.nodes())
    if not mask.any():
        warnings.warn("region contains no grid nodes", stacklevel=2)
        return 0.0
    return float(np.max(np.abs(f.values[mask])))


# ---------------------------------------------------------------------------
# serialization: JSON header + raw little-endian float64 (or CSV)


def save_field(f: GridField, basepath, mode: str = "bin") -> Path:
    """Write ``<basepath>.json`` plus ``<basepath>.bin`` or ``.csv``.

    Binary mode round-trips the values bit-exactly.
    """
    base = Path(basepath)
    base.parent.mkdir(parents=True, exist_ok=True)
    if mode not in ("bin", "csv"):
        raise ValueError(f"mode must be 'bin' or 'csv', got {mode!r}")
    header = {
        "axes": f.grid.axes_spec(),
        "role": f.role,
        "mode": mode,
        "dtype": "<f8",
        "data": base.name + "." + mode,
    }
    with open(base.with_suffix(".json"), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if mode == "bin":
        f.values.astype("<f8").tofile(base.with_suffix(".bin"))
    else:
        with open(base.with_suffix(".csv"), "w") as fh:
            fh.write("value\n")
            for v in f.values:
                fh.write(repr(float(v)) + "\n")
    return base.with_suffix(".json")


def load_field(basepath) -> GridField:
    base = Path(basepath)
    with open(base.with_suffix(".json")) as fh:
        header = json.load(fh)
    grid = build_grid([(a["lo"], a["hi"], a["count"]) for a in header["axes"]])
    datafile = base.parent / header["data"]
    if header["mode"] == "bin":
        vals = np.fromfile(datafile, dtype="<f8")
    else:
        vals = np.loadtxt(datafile, skiprows=1, dtype=np.float64, ndmin=1)
    return GridField(grid, vals, header["role"])
