"""Density transport along characteristics.

The transport PDE for a state density rho under an autonomous field f with
supply phi,

    d rho/dt + div(rho f) = phi,

turns into an ODE along trajectories: rho' = phi - (div f) rho.  Transient
values come from the two-step procedure (backward flow, then the coupled
forward ODE).  The stationary density with a compactly supported source
phi_plus and discount sink -kappa*rho is evaluated per grid node as

    rho_s(x) = int_0^Tmax  exp(-kappa t) phi_plus(y(t)) exp(-a(t)) dt,

where y(t) is the backward orbit from x and a(t) accumulates div f along
it.  The Liouville residual on the grid provides the independent check of
that per-node integration.
"""

from dataclasses import dataclass

import numpy as np

from densyn.backend import get_kernels
from densyn.field import (Box, Grid, GridField, HalfSpace, Intersection,
                          Region, box_quadrature_weights, indicator_field,
                          inner_product, interpolate_many)
from densyn.flow import DENSITY_CONFIG, IntegratorConfig, integrate, flow_backward
from densyn.system import ClosedLoopField, ConstantPolicy, Policy, divergence_many


@dataclass(frozen=True)
class SourceSpec:
    """Nonnegative supply phi_plus with compact support.

    Either an axis-aligned box indicator times an amplitude, or a sampled
    nonnegative GridField (whose support must not touch the grid boundary).
    """

    box: Box | None = None
    amplitude: float = 1.0
    table: GridField | None = None

    def __post_init__(self):
        if (self.box is None) == (self.table is None):
            raise ValueError("SourceSpec needs exactly one of box or table")
        if self.box is not None and self.amplitude < 0:
            raise ValueError("phi_plus must be nonnegative")
        if self.table is not None and (self.table.values < 0).any():
            raise ValueError("phi_plus table must be nonnegative")

    @property
    def sup(self) -> float:
        if self.box is not None:
            return float(self.amplitude)
        return float(self.table.values.max())

    def eval_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.box is not None:
            return np.where(self.box.contains_many(X), self.amplitude, 0.0)
        return interpolate_many(self.table, X)

    def __call__(self, x) -> float:
        return float(self.eval_many(np.atleast_1d(x)[None])[0])

    def as_field(self, grid: Grid) -> GridField:
        if self.table is not None:
            if not self.table.grid.same_as(grid):
                raise ValueError("source table lives on a different grid")
            return self.table
        return GridField(grid, self.eval_many(grid.nodes()), role="source")

    def cell_average_field(self, grid: Grid) -> GridField:
        """Source averaged over each node's dual cell.

        For box sources this gives jump nodes their overlap fraction
        (about 1/2), the grid-consistent reading of a discontinuous supply;
        table sources are returned as-is.
        """
        if self.table is not None:
            return self.as_field(grid)
        vals = np.full(grid.num_nodes, float(self.amplitude))
        frac = np.ones(1)
        for k in range(grid.ndim):
            coords = grid.axis_coords(k)
            h = float(grid.spacing[k])
            cell_lo = np.maximum(coords - 0.5 * h, grid.lo[k])
            cell_hi = np.minimum(coords + 0.5 * h, grid.hi[k])
            ov_lo = np.maximum(cell_lo, self.box.lo[k])
            ov_hi = np.minimum(cell_hi, self.box.hi[k])
            fk = np.maximum(ov_hi - ov_lo, 0.0) / (cell_hi - cell_lo)
            frac = np.multiply.outer(frac, fk)
        return GridField(grid, vals * frac.ravel(), role="source")


@dataclass(frozen=True)
class DensityConfig:
    dt: float = 0.02            # fixed RK4 step for the backward sweep
    eps_trunc_rel: float = 1e-6  # horizon tail tolerance, relative to sup phi
    v_bound: float = 1e3        # crude bound on the divergence growth factor
    t_max: float | None = None  # override; default from eps_trunc
    div_mode: str = "table"     # "table": node-sampled div, "query": per point
    exp_cap: float = 600.0

    def horizon(self, kappa: float, sup_phi: float) -> float:
        if self.t_max is not None:
            return float(self.t_max)
        eps = self.eps_trunc_rel * max(sup_phi, 1e-300)
        return float(np.log(max(sup_phi, 1.0) * self.v_bound / eps) / kappa)


@dataclass
class DensityResult:
    field: GridField            # clipped to >= 0
    raw_min: float              # most negative raw node value (quadrature undershoot)
    flags: np.ndarray           # per-node kernel status
    t_max: float

    @property
    def any_invalid(self) -> bool:
        return bool((self.flags != 0).any())


# ---------------------------------------------------------------------------
# transient density: two-step procedure


class DomainExitError(RuntimeError):
    def __init__(self, t: float):
        super().__init__(f"backward orbit left the evaluable domain at t={t:.6g}")
        self.t = t


def transient_density(f, rho0, phi, x, T: float,
                      cfg: IntegratorConfig = DENSITY_CONFIG,
                      domain: Box | None = None) -> float:
    """Density rho(T, x) by the two-step characteristic procedure.

    Step 1 flows x backward for T; step 2 integrates the coupled system
    (state, rho) forward from (y, rho0(y)):  x' = f, rho' = phi - (div f) rho.
    ``phi`` is called as phi(t, x, rho); ``f`` needs eval_many or is a plain
    callable.  ``domain``, when given, bounds the evaluable region for the
    backward orbit.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    fn = f if hasattr(f, "eval_many") else _CallableField(f, n)
    h_div = _divergence_step(fn, n)

    if domain is not None:
        def watchdog(t, y):
            if not domain.contains(y):
                raise DomainExitError(t)
        y = integrate(lambda z: -np.asarray(fn(z), dtype=np.float64), x, T, cfg,
                      observer=watchdog)
    else:
        y = flow_backward(fn, x, T, cfg)

    r0 = float(rho0(y))

    # time rides along as an extra state so time-dependent supplies see the
    # exact stage times
    def aug(z):
        state, rho, t = z[:n], z[n], z[n + 1]
        fx = np.asarray(fn(state), dtype=np.float64)
        div = float(divergence_many(fn, state[None], h_div)[0])
        return np.concatenate([fx, [phi(t, state, rho) - div * rho], [1.0]])

    z = integrate(aug, np.concatenate([y, [r0], [0.0]]), T, cfg)
    return float(z[n])


class _CallableField:
    def __init__(self, fn, n):
        self.fn = fn
        self.n = n

    def __call__(self, x):
        return np.atleast_1d(np.asarray(self.fn(np.atleast_1d(x)), dtype=np.float64))

    def eval_many(self, X):
        X = np.atleast_2d(X)
        return np.stack([self(x) for x in X])


def _divergence_step(f, n) -> np.ndarray:
    if isinstance(f, ClosedLoopField) and isinstance(f.pol_u, Policy):
        return 0.5 * f.pol_u.grid.spacing
    return np.full(n, 1e-5)


# ---------------------------------------------------------------------------
# stationary density


def _kernel_args(clf: ClosedLoopField, grid: Grid):
    sys = clf.sys
    if sys.kernel_kind < 0:
        raise ValueError(f"system {sys.name!r} has no kernel dynamics")
    if isinstance(clf.pol_u, Policy):
        if not clf.pol_u.grid.same_as(grid):
            raise ValueError("control policy must live on the evaluation grid")
        u_tables = np.ascontiguousarray(clf.pol_u.table_array())
        u_lo, u_hi = clf.pol_u.lo, clf.pol_u.hi
    elif isinstance(clf.pol_u, ConstantPolicy):
        flat = np.tile(clf.pol_u.value[:, None], (1, grid.num_nodes))
        u_tables = np.ascontiguousarray(flat)
        u_lo, u_hi = sys.u_lo, sys.u_hi
    else:
        raise ValueError("pol_u must be a Policy or ConstantPolicy")
    d_tables = np.zeros((0, grid.num_nodes))
    d_const = np.zeros(0)
    d_lo = d_hi = np.zeros(0)
    if sys.p == 0:
        d_mode = 0
    elif isinstance(clf.pol_d, ConstantPolicy):
        d_mode = 1
        d_const = np.asarray(clf.pol_d.value, dtype=np.float64)
    elif isinstance(clf.pol_d, Policy):
        if not clf.pol_d.grid.same_as(grid):
            raise ValueError("disturbance policy must live on the evaluation grid")
        d_mode = 2
        d_tables = np.ascontiguousarray(clf.pol_d.table_array())
        d_lo, d_hi = clf.pol_d.lo, clf.pol_d.hi
    else:
        raise ValueError("pol_d must be a Policy or ConstantPolicy")
    return (sys.kernel_kind, u_tables, u_lo, u_hi, d_mode, d_const, d_tables,
            d_lo, d_hi, sys.state_lo, sys.state_hi)


def divergence_table(clf: ClosedLoopField, grid: Grid) -> GridField:
    """div f sampled at every grid node (central differences, h = spacing/2)."""
    div = divergence_many(clf, grid.nodes(), 0.5 * grid.spacing)
    return GridField(grid, div, role="divergence")


def source_particles(src: SourceSpec, per_axis: int = 8):
    """Midpoint lattice over the source support with weights phi * dV."""
    if src.box is not None:
        lo, hi = src.box.lo, src.box.hi
    else:
        g = src.table.grid
        mask = src.table.values.reshape(tuple(int(c) for c in g.count)) > 0
        pts = g.nodes()[src.table.values > 0]
        lo, hi = pts.min(axis=0) - g.spacing, pts.max(axis=0) + g.spacing
    n = lo.shape[0]
    axes = []
    cell = np.empty(n)
    for k in range(n):
        width = (hi[k] - lo[k]) / per_axis
        axes.append(lo[k] + width * (np.arange(per_axis) + 0.5))
        cell[k] = width
    mesh = np.meshgrid(*axes, indexing="ij")
    parts = np.stack([m.ravel() for m in mesh], axis=1)
    weights = src.eval_many(parts) * float(np.prod(cell))
    keep = weights > 0
    return parts[keep], weights[keep]


def splat_density(clf: ClosedLoopField, src: SourceSpec, kappa: float,
                  grid: Grid, cfg: DensityConfig = DensityConfig(),
                  particles_per_axis: int = 8) -> GridField:
    """Conservative stationary-density estimate by forward push-forward.

    Deterministic particles seeded over the source deposit discounted mass
    onto the grid as they flow; node deposits divided by dual-cell volumes
    give a cell-averaged density.  Unlike the pointwise backward
    integration, mass that concentrates on saturation faces or attractors
    stays visible, which is what the synthesis stop test needs.
    """
    if kappa <= 0:
        raise ValueError("splat density requires kappa > 0")
    from densyn.field import trapezoid_weights

    kern = get_kernels()
    (kind, u_tables, u_lo, u_hi, d_mode, d_const, d_tables, d_lo, d_hi,
     sb_lo, sb_hi) = _kernel_args(clf, grid)
    lo, h, count, strides = (np.ascontiguousarray(grid.lo),
                             np.ascontiguousarray(grid.spacing),
                             np.ascontiguousarray(grid.count),
                             np.ascontiguousarray(grid.strides))
    parts, weights = source_particles(src, particles_per_axis)
    t_max = cfg.horizon(kappa, src.sup)
    deposits = kern.splat_forward(
        np.ascontiguousarray(parts), np.ascontiguousarray(weights), kind,
        u_tables, u_lo, u_hi, d_mode, d_const, d_tables, d_lo, d_hi,
        sb_lo, sb_hi, lo, h, count, strides,
        float(kappa), float(cfg.dt), float(t_max),
    )
    return GridField(grid, deposits / trapezoid_weights(grid), role="density_splat")


def stationary_density(clf: ClosedLoopField, src: SourceSpec, kappa: float,
                       grid: Grid, cfg: DensityConfig = DensityConfig()) -> DensityResult:
    """Stationary density on the grid under supply phi_plus - kappa*rho.

    Per-node backward characteristic integration with a divergence
    accumulator and a discounted source accumulator; see the module
    docstring for the integral being evaluated.
    """
    if kappa <= 0:
        raise ValueError("stationary density requires kappa > 0")
    kern = get_kernels()
    (kind, u_tables, u_lo, u_hi, d_mode, d_const, d_tables, d_lo, d_hi,
     sb_lo, sb_hi) = _kernel_args(clf, grid)
    lo, h, count, strides = (np.ascontiguousarray(grid.lo),
                             np.ascontiguousarray(grid.spacing),
                             np.ascontiguousarray(grid.count),
                             np.ascontiguousarray(grid.strides))
    if cfg.div_mode == "table":
        div_mode = 0
        div_table = np.ascontiguousarray(divergence_table(clf, grid).values)
    elif cfg.div_mode == "query":
        div_mode = 1
        div_table = np.zeros(1)
    else:
        raise ValueError("div_mode must be 'table' or 'query'")
    h_div = np.ascontiguousarray(0.5 * grid.spacing)
    if src.box is not None:
        phi_kind, phi_amp, phi_table = 0, float(src.amplitude), np.zeros(1)
        phi_lo, phi_hi = src.box.lo, src.box.hi
    else:
        if not src.table.grid.same_as(grid):
            raise ValueError("source table lives on a different grid")
        phi_kind, phi_amp, phi_table = 1, 0.0, np.ascontiguousarray(src.table.values)
        phi_lo = phi_hi = np.zeros(grid.ndim)
    t_max = cfg.horizon(kappa, src.sup)
    rho, flags = kern.density_backward(
        np.ascontiguousarray(grid.nodes()), kind, u_tables, u_lo, u_hi,
        d_mode, d_const, d_tables, d_lo, d_hi, sb_lo, sb_hi,
        lo, h, count, strides, div_mode, div_table, h_div,
        phi_kind, phi_lo, phi_hi, phi_amp, phi_table,
        float(kappa), float(cfg.dt), float(t_max), float(cfg.exp_cap),
    )
    raw_min = float(rho.min()) if rho.size else 0.0
    return DensityResult(
        field=GridField(grid, np.maximum(rho, 0.0), role="density"),
        raw_min=raw_min,
        flags=flags,
        t_max=t_max,
    )


# ---------------------------------------------------------------------------
# grid-level diagnostics


def liouville_residual(rho_s: GridField, clf: ClosedLoopField, src: SourceSpec,
                       kappa: float) -> GridField:
    """phi_plus - kappa*rho_s - div(rho_s * f) per interior node.

    The divergence of the product field uses central differences of
    rho_s*f sampled at nodes; boundary nodes are reported as zero.
    """
    grid = rho_s.grid
    pts = grid.nodes()
    f_nodes = clf.eval_many(pts)
    prod = f_nodes * rho_s.values[:, None]
    shape = tuple(int(c) for c in grid.count)
    res = src.cell_average_field(grid).values - kappa * rho_s.values
    res = res.reshape(shape)
    interior = np.ones(shape, dtype=bool)
    for k in range(grid.ndim):
        pk = prod[:, k].reshape(shape)
        dk = np.zeros(shape)
        sl_c = [slice(None)] * grid.ndim
        sl_p = [slice(None)] * grid.ndim
        sl_m = [slice(None)] * grid.ndim
        sl_c[k], sl_p[k], sl_m[k] = slice(1, -1), slice(2, None), slice(None, -2)
        dk[tuple(sl_c)] = (pk[tuple(sl_p)] - pk[tuple(sl_m)]) / (2.0 * grid.spacing[k])
        res = res - dk
        edge = [slice(None)] * grid.ndim
        edge[k] = 0
        interior[tuple(edge)] = False
        edge[k] = -1
        interior[tuple(edge)] = False
    res[~interior] = 0.0
    return GridField(grid, res.ravel(), role="liouville_residual")


def _region_as_box(region: Region, ndim: int):
    """(lo, hi) arrays for box-like regions, None for everything else."""
    if isinstance(region, Box):
        return region.lo.copy(), region.hi.copy()
    parts = region.parts if isinstance(region, Intersection) else (region,)
    lo = np.full(ndim, -np.inf)
    hi = np.full(ndim, np.inf)
    for part in parts:
        if isinstance(part, Box):
            lo = np.maximum(lo, part.lo)
            hi = np.minimum(hi, part.hi)
            continue
        if isinstance(part, HalfSpace):
            nz = np.nonzero(part.normal)[0]
            if nz.shape[0] == 1:
                k = int(nz[0])
                c = part.offset / part.normal[k]
                if part.normal[k] > 0:
                    hi[k] = min(hi[k], c)
                else:
                    lo[k] = max(lo[k], c)
                continue
        return None
    return lo, hi


def danger_mass(rho_s: GridField, danger: Region) -> float:
    """Integral of rho_s over the danger region (clipped to the grid).

    Box-like regions (boxes, axis-aligned half-spaces, intersections
    thereof) integrate the multilinear interpolant exactly; other regions
    fall back to the node-indicator inner product, which carries an O(h)
    boundary-cell error.
    """
    box = _region_as_box(danger, rho_s.grid.ndim)
    if box is not None:
        w = box_quadrature_weights(rho_s.grid, box[0], box[1])
        return float(np.sum(w * rho_s.values))
    return inner_product(indicator_field(rho_s.grid, danger), rho_s)
