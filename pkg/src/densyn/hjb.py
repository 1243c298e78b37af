"""Discounted Hamilton-Jacobi-Bellman solves on the grid.

The solver is semi-Lagrangian: each Jacobi sweep advances every node one
explicit Euler step along the dynamics for each candidate input, discounts
by exp(-kappa*dt), interpolates the previous value field at the advanced
point, and keeps the best input.  The running cost over a step is weighted
by (1 - exp(-kappa*dt))/kappa, the exact discounted integral of a constant
rate, which keeps the pure-occupancy game value inside [0, 1/kappa].

Minimizing sweeps solve the perturbed control problem (running cost
C + sigma*1_danger); maximizing sweeps with running cost 1_danger solve the
worst-case disturbance game.  Both are sup-norm contractions with factor
exp(-kappa*dt).
"""

from dataclasses import dataclass, replace

import numpy as np

from densyn.backend import get_kernels
from densyn.field import Grid, GridField, Region
from densyn.system import ConstantPolicy, Policy, SystemModel


class HjbConvergenceError(RuntimeError):
    def __init__(self, msg: str, history):
        super().__init__(msg)
        self.history = history


@dataclass(frozen=True)
class CostSpec:
    """Running cost C(x, u) >= 0 with an optional quadratic structure.

    ``fn`` maps (X (N,n), U (N,m)) to (N,).  When the cost has the form
    weight*||u - u0(x)||^2 + q(x), set ``quad_weight``, ``center`` (a
    policy-like object giving u0) and optionally ``state_cost`` (q); solvers
    then use the closed-form input minimizer and seed the per-node candidate
    input u0(x).
    """

    fn: object = None
    quad_weight: float | None = None
    center: object = None  # Policy / ConstantPolicy giving u0(x)
    state_cost: object = None  # q(X) -> (N,)

    def __post_init__(self):
        if self.fn is None and self.quad_weight is None:
            raise ValueError("CostSpec needs fn or a quadratic structure")

    @property
    def quadratic(self) -> bool:
        return self.quad_weight is not None

    def center_values(self, X: np.ndarray) -> np.ndarray | None:
        if self.center is None:
            return None
        return self.center.eval_many(X)

    def eval_nodes(self, X: np.ndarray, u: np.ndarray,
                   center_vals: np.ndarray | None = None) -> np.ndarray:
        """C(x_i, u) over nodes for one input vector (or per-node inputs)."""
        X = np.atleast_2d(X)
        U = np.atleast_2d(u)
        if U.shape[0] == 1:
            U = np.broadcast_to(U, (X.shape[0], U.shape[1]))
        if self.quadratic:
            c0 = center_vals if center_vals is not None else self.center_values(X)
            out = self.quad_weight * np.sum((U - c0) ** 2, axis=1)
            if self.state_cost is not None:
                out = out + np.asarray(self.state_cost(X), dtype=np.float64)
            return out
        return np.asarray(self.fn(X, U), dtype=np.float64)


def intervention_cost_spec(center, weight: float = 1.0) -> CostSpec:
    """C(x, u) = weight * ||u - u0(x)||^2 around a legacy policy."""
    return CostSpec(quad_weight=weight, center=center)


@dataclass(frozen=True)
class HjbConfig:
    n_samples: int = 21        # input samples per channel (discrete argmin)
    eps_v: float = 1e-6        # sweep sup-change stop tolerance
    max_sweeps: int = 40000
    dt_scale: float = 0.5      # dt = dt_scale * min(h) / max speed
    dt_override: float | None = None
    coarse_start: bool = True  # cold solves warm-start from a halved grid

    def __post_init__(self):
        if self.n_samples < 2 or self.eps_v <= 0 or self.max_sweeps < 1:
            raise ValueError("invalid HjbConfig")


@dataclass
class HjbSolution:
    V: GridField
    policy: Policy
    sweeps: int
    converged: bool
    sup_changes: np.ndarray
    dt: float
    residual_sup: float | None = None


def estimate_speed_bound(sys: SystemModel, grid: Grid) -> float:
    """max ||F||_2 over grid nodes with inputs at their box vertices."""
    X = grid.nodes()
    best = 0.0
    u_vertices = _box_vertices(sys.u_lo, sys.u_hi)
    d_vertices = _box_vertices(sys.d_lo, sys.d_hi) if sys.p else [np.zeros(0)]
    for u in u_vertices:
        for d in d_vertices:
            U = np.broadcast_to(u, (X.shape[0], u.shape[0]))
            D = np.broadcast_to(d, (X.shape[0], d.shape[0]))
            f = sys.eval_many(X, U, D)
            best = max(best, float(np.sqrt((f ** 2).sum(axis=1)).max()))
    return best


def _box_vertices(lo, hi):
    m = lo.shape[0]
    if m == 0:
        return [np.zeros(0)]
    out = []
    for mask in range(1 << m):
        v = np.array([hi[k] if (mask >> k) & 1 else lo[k] for k in range(m)])
        out.append(v)
    return out


def input_samples(lo: np.ndarray, hi: np.ndarray, per_channel: int) -> np.ndarray:
    """Cartesian product of per-channel linspace samples, shape (S, m)."""
    axes = [np.linspace(lo[k], hi[k], per_channel) for k in range(lo.shape[0])]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _d_values_at(d_policy, X: np.ndarray, sys: SystemModel) -> np.ndarray:
    if sys.p == 0:
        return np.zeros((X.shape[0], 0))
    if d_policy is None:
        raise ValueError("system has a disturbance channel; d_policy required")
    return np.clip(d_policy.eval_many(X), sys.d_lo, sys.d_hi)


def timestep(sys: SystemModel, grid: Grid, cfg: HjbConfig) -> float:
    if cfg.dt_override is not None:
        return float(cfg.dt_override)
    speed = estimate_speed_bound(sys, grid)
    h_min = float(grid.spacing.min())
    return cfg.dt_scale * h_min / max(speed, 1e-12)


class SweepOperator:
    """Precomputed semi-Lagrangian update for fixed samples/disturbance.

    Holds the advanced states and per-sample running costs; ``sweep`` applies
    one Jacobi update to a value array.  ``extra_cost`` (the multiplier term
    sigma*1_danger) is folded into the cost table up front.
    """

    def __init__(self, sys: SystemModel, cost, kappa: float,
                 d_policy, grid: Grid, cfg: HjbConfig, extra_cost=None,
                 maximize: bool = False, over_disturbance: bool = False,
                 u_policy=None, node_cost=None, robust_d: bool = False):
        self.grid = grid
        self.kappa = float(kappa)
        self.maximize = maximize
        X = grid.nodes()
        N = X.shape[0]
        self.dt = timestep(sys, grid, cfg)
        self.gamma = float(np.exp(-self.kappa * self.dt))
        self.cost_w = (1.0 - self.gamma) / self.kappa

        if over_disturbance:
            # optimize over d with the control policy frozen; the running
            # cost depends on x only (node_cost)
            lo, hi = sys.d_lo, sys.d_hi
            U_fixed = np.clip(u_policy.eval_many(X), sys.u_lo, sys.u_hi)
        else:
            lo, hi = sys.u_lo, sys.u_hi
        samples = input_samples(lo, hi, cfg.n_samples)
        rows = [np.broadcast_to(s, (N, s.shape[0])).copy() for s in samples]
        center_vals = None
        if not over_disturbance and cost.center is not None:
            # per-node candidate at the legacy input: keeps the exact
            # unconstrained minimizer in the action set
            center_vals = np.clip(cost.center_values(X), sys.u_lo, sys.u_hi)
            rows.append(center_vals)
        self.u_rows = np.stack(rows)  # (S, N, channels)
        c0 = cost.center_values(X) if (not over_disturbance and cost.quadratic) else None

        if robust_d and not over_disturbance and sys.p > 0:
            # minimax: each input row carries one advance per disturbance
            # vertex; the sweep maximizes within the group, the outer
            # selection minimizes over inputs (V is multilinear so the
            # worst box disturbance sits at a vertex)
            d_rows = _box_vertices(sys.d_lo, sys.d_hi)
        elif over_disturbance:
            d_rows = None
        else:
            d_rows = [None]
            D_fixed = _d_values_at(d_policy, X, sys)
        if over_disturbance:
            self.group = 1
            S = len(rows)
            adv = np.empty((S, N, grid.ndim))
            cost_tab = np.empty((S, N))
            uvals0 = np.empty((S, N))
            for j, row in enumerate(rows):
                f = sys.eval_many(X, U_fixed, row)
                adv[j] = grid.clamp(X + self.dt * f)
                cost_tab[j] = node_cost
                uvals0[j] = row[:, 0]
        else:
            self.group = len(d_rows)
            S = len(rows) * self.group
            adv = np.empty((S, N, grid.ndim))
            cost_tab = np.empty((S, N))
            uvals0 = np.empty((S, N))
            j = 0
            for row in rows:
                c_row = cost.eval_nodes(X, row, center_vals=c0)
                for dv in d_rows:
                    if dv is None:
                        D = D_fixed
                    else:
                        D = np.broadcast_to(dv, (N, dv.shape[0]))
                    f = sys.eval_many(X, row, D)
                    adv[j] = grid.clamp(X + self.dt * f)
                    cost_tab[j] = c_row
                    uvals0[j] = row[:, 0]
                    j += 1
        if extra_cost is not None:
            cost_tab += np.asarray(extra_cost)[None, :]
        self.adv = np.ascontiguousarray(adv)
        self.cost = np.ascontiguousarray(cost_tab)
        self.uvals0 = np.ascontiguousarray(uvals0)
        self._ga = (np.ascontiguousarray(grid.lo), np.ascontiguousarray(grid.spacing),
                    np.ascontiguousarray(grid.count), np.ascontiguousarray(grid.strides))

    def sweep(self, v: np.ndarray):
        lo, h, count, strides = self._ga
        return get_kernels().sl_sweep(v, lo, h, count, strides, self.adv,
                                      self.cost, self.uvals0, self.gamma,
                                      self.cost_w, self.maximize, self.group)

    def _worst_vertex(self, v: np.ndarray, groups: np.ndarray) -> np.ndarray:
        """Flat row per node: the inner-max vertex of each chosen group."""
        from densyn.kernels_numpy import interp_many as np_interp

        lo, h, count, strides = self._ga
        N = groups.shape[0]
        ar = np.arange(N)
        best_val = None
        rows = groups * self.group
        for l in range(self.group):
            j = groups * self.group + l
            vi = np_interp(v, self.adv[j, ar], lo, h, count, strides)
            val = self.cost_w * self.cost[j, ar] + self.gamma * vi
            if best_val is None:
                best_val = val
            else:
                take = val > best_val
                best_val = np.where(take, val, best_val)
                rows = np.where(take, j, rows)
        return rows

    def _linear_value(self, rows: np.ndarray, x0=None):
        """Exact value of a frozen row assignment: solve (I - gamma P) V = b.

        P interpolates at each node's advanced state; the system is solved
        with BiCGStab (spectral radius of gamma P is below 1).
        """
        import scipy.sparse as sp
        import scipy.sparse.linalg as spla
        from densyn.kernels_numpy import interp_stencil

        lo, h, count, strides = self._ga
        N = rows.shape[0]
        ar = np.arange(N)
        idx, wgt = interp_stencil(np.ascontiguousarray(self.adv[rows, ar]),
                                  lo, h, count, strides)
        nc = idx.shape[1]
        P = sp.csr_matrix(
            (wgt.ravel(), (np.repeat(ar, nc), idx.ravel())), shape=(N, N))
        A = sp.identity(N, format="csr") - self.gamma * P
        b = self.cost_w * self.cost[rows, ar]
        v, info = spla.bicgstab(A, b, x0=x0, rtol=1e-11, atol=1e-14, maxiter=800)
        if info != 0 or not np.isfinite(v).all():
            return None
        return v

    def policy_value(self, v: np.ndarray, groups: np.ndarray):
        """Exact value of the frozen outer choice.

        group == 1: one linear solve.  Minimax (group > 1): inner policy
        iteration on the adversary's vertex choice (Hoffman-Karp), so the
        returned field is the frozen-control worst-case value.
        """
        if self.group == 1:
            return self._linear_value(groups)
        rows = self._worst_vertex(v, groups)
        val = None
        for _ in range(8):
            val = self._linear_value(rows, x0=val)
            if val is None:
                return None
            rows_new = self._worst_vertex(val, groups)
            if np.array_equal(rows_new, rows):
                break
            rows = rows_new
        return val

    def best_inputs(self, bestj: np.ndarray) -> np.ndarray:
        return self.u_rows[bestj, np.arange(bestj.shape[0]), :]


def _iterate(op: SweepOperator, v0, eps_v: float, max_sweeps: int,
             clip_hi: float | None = None):
    """Sweep to a fixed point, with geometric extrapolation.

    The sweep is a sup-norm contraction with factor gamma close to 1, so
    the error decays geometrically and V_inf ~ V + delta * r / (1 - r) once
    consecutive deltas shrink by a stable ratio r.  The jump is followed by
    plain sweeps (cooldown), and convergence is only declared on a genuine
    sweep change, so extrapolation affects speed, never the answer.
    """
    v = np.zeros(op.grid.num_nodes) if v0 is None else np.asarray(v0, dtype=np.float64).copy()
    changes = []
    bestj = None
    sweeps = 0
    stalled = 0

    def try_candidate(v_cand, change):
        """Accept a candidate only if its sweep change improves; returns the
        (possibly unchanged) state so acceleration can never hurt."""
        nonlocal sweeps
        if v_cand is None:
            return None
        if clip_hi is not None:
            v_cand = np.clip(v_cand, 0.0, clip_hi)
        v_post, bestj_post = op.sweep(v_cand)
        sweeps += 1
        if clip_hi is not None:
            np.clip(v_post, 0.0, clip_hi, out=v_post)
        change_post = float(np.max(np.abs(v_post - v_cand)))
        changes.append(change_post)
        if change_post < change:
            return v_post, bestj_post, change_post
        return None

    while sweeps < max_sweeps:
        v_new, bestj = op.sweep(v)
        sweeps += 1
        if clip_hi is not None:
            np.clip(v_new, 0.0, clip_hi, out=v_new)
        delta = v_new - v
        change = float(np.max(np.abs(delta)))
        changes.append(change)
        v = v_new
        if change <= eps_v:
            return v, bestj, np.array(changes), True
        stalled += 1
        # Howard step: exact value of the frozen outer choice via sparse
        # linear solves, guarded by a validation sweep
        if stalled >= 4 and sweeps + 1 < max_sweeps:
            stalled = 0
            accepted = try_candidate(op.policy_value(v, bestj), change)
            if accepted is not None:
                v, bestj, change = accepted
                if change <= eps_v:
                    return v, bestj, np.array(changes), True
    return v, bestj, np.array(changes), False


def _coarsen(grid: Grid) -> Grid | None:
    if (grid.count < 7).all():
        return None
    return build_grid_from_counts(grid, np.maximum(4, (grid.count - 1) // 2 + 1))


def build_grid_from_counts(grid: Grid, counts) -> Grid:
    from densyn.field import build_grid

    return build_grid([(grid.lo[k], grid.hi[k], int(counts[k]))
                       for k in range(grid.ndim)])


def _coarse_seed(sys, cost, kappa, sigma_vals, d_policy, grid, cfg,
                 robust_d, maximize_game=None):
    """Cold-start seed: solve on a halved grid and interpolate up."""
    coarse = _coarsen(grid)
    if coarse is None:
        return None
    from densyn.field import interpolate_many

    sig_c = None
    if sigma_vals is not None:
        sig_c = interpolate_many(GridField(grid, sigma_vals), coarse.nodes())
    ccfg = replace(cfg, eps_v=10 * cfg.eps_v, coarse_start=False)
    sol_c = solve_hjb(sys, cost, kappa, sig_c, d_policy, coarse, ccfg,
                      robust_d=robust_d)
    return interpolate_many(sol_c.V, grid.nodes())


def solve_hjb(sys: SystemModel, cost: CostSpec, kappa: float, sigma,
              d_policy, grid: Grid, cfg: HjbConfig = HjbConfig(),
              v0: np.ndarray | None = None, robust_d: bool = False) -> HjbSolution:
    """Value function and greedy policy of the perturbed control problem.

    ``sigma`` is a GridField (or None) of nonnegative multipliers supported
    on the danger set; it enters the running cost as sigma(x)*1_danger(x),
    already folded into the sigma field itself.  With ``robust_d`` the
    update minimizes over inputs against the worst disturbance-box vertex
    (an Isaacs-style robust solve); otherwise the disturbance follows
    ``d_policy``.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    extra = None
    if sigma is not None:
        vals = sigma.values if isinstance(sigma, GridField) else np.asarray(sigma)
        if (vals < 0).any():
            raise ValueError("sigma must be nonnegative")
        extra = vals
    if v0 is None and cfg.coarse_start:
        v0 = _coarse_seed(sys, cost, kappa, extra, d_policy, grid, cfg, robust_d)
    op = SweepOperator(sys, cost, kappa, d_policy, grid, cfg, extra_cost=extra,
                       robust_d=robust_d)
    v, bestj, changes, ok = _iterate(op, v0, cfg.eps_v, cfg.max_sweeps)
    if not ok:
        raise HjbConvergenceError(
            f"HJB sweeps did not converge in {cfg.max_sweeps} "
            f"(last change {changes[-1]:.3e})", changes)
    u_star = op.best_inputs(bestj)
    pol = Policy(
        tables=[GridField(grid, u_star[:, c], role="policy_u") for c in range(u_star.shape[1])],
        lo=sys.u_lo, hi=sys.u_hi)
    V = GridField(grid, v, role="value")
    sol = HjbSolution(V=V, policy=pol, sweeps=len(changes), converged=ok,
                      sup_changes=changes, dt=op.dt)
    if robust_d:
        # Isaacs residual: the advective term is maximized over the
        # disturbance-box vertices
        resid_vals = None
        from densyn.system import ConstantPolicy as _CP

        for dv in _box_vertices(sys.d_lo, sys.d_hi):
            r = hjb_residual(V, pol, sys, cost, kappa, sigma, _CP(dv)).values
            resid_vals = r if resid_vals is None else np.maximum(resid_vals, r)
        sol.residual_sup = float(np.abs(resid_vals).max())
    else:
        resid = hjb_residual(V, pol, sys, cost, kappa, sigma, d_policy)
        sol.residual_sup = float(np.abs(resid.values).max())
    return sol


def solve_disturbance_game(sys: SystemModel, u_policy, danger: Region,
                           kappa: float, grid: Grid,
                           cfg: HjbConfig = HjbConfig(),
                           v0: np.ndarray | None = None):
    """Worst-case disturbance value and policy.

    Maximizes the discounted occupancy of the danger set over state-feedback
    disturbances, with the control policy frozen: the value V_d lies in
    [0, 1/kappa] and d*(x) is the per-node maximizer.
    """
    if sys.p == 0:
        raise ValueError("system has no disturbance channel")
    from densyn.field import indicator_field, interpolate_many

    ind = indicator_field(grid, danger)
    if v0 is None and cfg.coarse_start:
        coarse = _coarsen(grid)
        if coarse is not None:
            ccfg = replace(cfg, eps_v=10 * cfg.eps_v, coarse_start=False)
            Vd_c, _, _ = solve_disturbance_game(sys, u_policy, danger, kappa,
                                                coarse, ccfg)
            v0 = interpolate_many(Vd_c, grid.nodes())
    op = SweepOperator(sys, None, kappa, None, grid, cfg,
                       maximize=True, over_disturbance=True, u_policy=u_policy,
                       node_cost=ind.values)
    v, bestj, changes, ok = _iterate(op, v0, cfg.eps_v, cfg.max_sweeps,
                                     clip_hi=1.0 / kappa)
    if not ok:
        raise HjbConvergenceError(
            f"disturbance game did not converge in {cfg.max_sweeps} "
            f"(last change {changes[-1]:.3e})", changes)
    d_star = op.best_inputs(bestj)
    pol = Policy(
        tables=[GridField(grid, d_star[:, c], role="policy_d") for c in range(d_star.shape[1])],
        lo=sys.d_lo, hi=sys.d_hi)
    Vd = GridField(grid, v, role="disturbance_value")
    return Vd, pol, len(changes)




# ---------------------------------------------------------------------------
# greedy policy from a value field


def value_gradient(V: GridField) -> np.ndarray:
    """Central-difference gradient at nodes, one-sided at faces: (N, ndim)."""
    grid = V.grid
    shape = tuple(int(c) for c in grid.count)
    vals = V.values.reshape(shape)
    grad = np.empty((grid.num_nodes, grid.ndim))
    for k in range(grid.ndim):
        grad[:, k] = np.gradient(vals, grid.spacing[k], axis=k).ravel()
    return grad


def greedy_policy(V: GridField, sys: SystemModel, cost: CostSpec, sigma,
                  d_policy, cfg: HjbConfig = HjbConfig()) -> Policy:
    """argmin_u C(x, u) + grad V . F(x, u, d(x)) per node.

    Quadratic costs on control-affine systems use the closed form
    u = clip(u0 - B^T grad V / (2 w)); otherwise a discrete search over the
    sample set, ties toward the smallest input value.
    """
    grid = V.grid
    X = grid.nodes()
    grad = value_gradient(V)
    if cost.quadratic and sys.control_affine and sys.input_matrix is not None:
        u0 = cost.center_values(X)
        u = u0 - (grad @ sys.input_matrix) / (2.0 * cost.quad_weight)
        u = np.clip(u, sys.u_lo, sys.u_hi)
    else:
        D = _d_values_at(d_policy, X, sys)
        samples = input_samples(sys.u_lo, sys.u_hi, cfg.n_samples)
        best = np.full(X.shape[0], np.inf)
        u = np.zeros((X.shape[0], sys.m))
        for s in samples:
            U = np.broadcast_to(s, (X.shape[0], s.shape[0]))
            val = cost.eval_nodes(X, U) + np.sum(grad * sys.eval_many(X, U, D), axis=1)
            better = (val < best) | ((val == best) & (s[0] < u[:, 0]))
            best = np.where(better, val, best)
            u[better] = s
    return Policy(
        tables=[GridField(grid, u[:, c], role="policy_u") for c in range(sys.m)],
        lo=sys.u_lo, hi=sys.u_hi)


# ---------------------------------------------------------------------------
# residual diagnostic


def hjb_residual(V: GridField, u_policy, sys: SystemModel, cost: CostSpec,
                 kappa: float, sigma, d_policy) -> GridField:
    """grad V . F(x, u*, d) + C(x, u*) + sigma*1_danger - kappa V per node.

    The gradient is upwinded against the closed-loop flow (backward
    difference where F_k > 0), one-sided at grid faces.
    """
    grid = V.grid
    X = grid.nodes()
    U = np.clip(u_policy.eval_many(X), sys.u_lo, sys.u_hi)
    D = _d_values_at(d_policy, X, sys)
    F = sys.eval_many(X, U, D)
    shape = tuple(int(c) for c in grid.count)
    vals = V.values.reshape(shape)
    adv = np.zeros(grid.num_nodes)
    for k in range(grid.ndim):
        h = grid.spacing[k]
        back = np.empty(shape)
        fwd = np.empty(shape)
        sl_c, sl_p, sl_m = [slice(None)] * grid.ndim, [slice(None)] * grid.ndim, [slice(None)] * grid.ndim
        sl_c[k], sl_m[k] = slice(1, None), slice(None, -1)
        back[tuple(sl_c)] = (vals[tuple(sl_c)] - vals[tuple(sl_m)]) / h
        first = [slice(None)] * grid.ndim
        first[k] = 0
        second = [slice(None)] * grid.ndim
        second[k] = 1
        back[tuple(first)] = (vals[tuple(second)] - vals[tuple(first)]) / h
        sl_c, sl_p = [slice(None)] * grid.ndim, [slice(None)] * grid.ndim
        sl_c[k], sl_p[k] = slice(None, -1), slice(1, None)
        fwd[tuple(sl_c)] = (vals[tuple(sl_p)] - vals[tuple(sl_c)]) / h
        last = [slice(None)] * grid.ndim
        last[k] = -1
        prev = [slice(None)] * grid.ndim
        prev[k] = -2
        fwd[tuple(last)] = (vals[tuple(last)] - vals[tuple(prev)]) / h
        fk = F[:, k]
        gk = np.where(fk > 0, back.ravel(), fwd.ravel())
        adv += gk * fk
    c_run = cost.eval_nodes(X, U)
    if sigma is not None:
        vals_s = sigma.values if isinstance(sigma, GridField) else np.asarray(sigma)
        c_run = c_run + vals_s
    res = adv + c_run - kappa * V.values
    return GridField(grid, res, role="hjb_residual")
