"""Closed-loop rollouts, intervention scoring, and the comparison sweeps.

Controllers are plain callables x -> u; disturbance strategies are
callables (t, x) -> d so scripted lead behavior is expressible.  Rollouts
integrate the saturated closed loop with the adaptive integrator, logging
on a fixed dt_log lattice (logging caps the step but does not otherwise
perturb integration).

The discounted intervention score of a logged run is the trapezoid
quadrature of exp(-kappa t) * ||u - u0(x)||^2 plus a reported analytic tail
bound exp(-kappa T) * sup_c / kappa for the truncated horizon.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from densyn.baseline import (CbfConfig, LqrGains, barrier_many, cbf_filter,
                             legacy_control, legacy_control_many)
from densyn.flow import SIM_CONFIG, IntegratorConfig, Trajectory, integrate
from densyn.system import AccParams, Policy, SystemModel


# ---------------------------------------------------------------------------
# controllers and disturbance strategies


def make_legacy_controller(gains: LqrGains, params: AccParams):
    def ctrl(x):
        return np.array([legacy_control(gains, params, x)])
    return ctrl


def make_cbf_controller(gains: LqrGains, params: AccParams, cfg: CbfConfig,
                        disturbance=None):
    """CBF-filtered legacy controller.

    In measured mode the current lead acceleration is taken from the
    disturbance strategy at t (threaded through by the rollout).
    """
    def ctrl(x, t=0.0):
        u0 = legacy_control(gains, params, x)
        a_l = None
        if cfg.mode == "measured":
            if disturbance is None:
                raise ValueError("measured CBF mode needs the disturbance strategy")
            a_l = float(np.atleast_1d(disturbance(t, x))[0])
        return np.array([cbf_filter(params, cfg, x, u0, a_l)])
    return ctrl


def make_table_controller(policy: Policy):
    def ctrl(x):
        return policy(x)
    return ctrl


def constant_disturbance(value):
    v = np.atleast_1d(np.asarray(value, dtype=np.float64))

    def dist(t, x):
        return v
    return dist


def scripted_disturbance(fn):
    """fn: t -> disturbance vector (or scalar)."""
    def dist(t, x):
        return np.atleast_1d(np.asarray(fn(t), dtype=np.float64))
    return dist


def table_disturbance(policy: Policy):
    def dist(t, x):
        return policy(x)
    return dist


# ---------------------------------------------------------------------------
# rollout


def rollout(sys: SystemModel, controller, disturbance, x0, T_sim: float,
            dt_log: float = 0.01, cfg: IntegratorConfig = SIM_CONFIG,
            cost_fn=None) -> Trajectory:
    """Integrate the closed loop, logging every dt_log.

    ``controller``: x -> u (optionally (x, t) -> u).  ``disturbance``:
    (t, x) -> d; pass None for disturbance-free systems.  ``cost_fn``:
    (x, u) -> instantaneous cost sample for the log (defaults to 0).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    n = x0.shape[0]
    takes_t = controller.__code__.co_argcount >= 2 if hasattr(controller, "__code__") else False

    def ctrl_at(t, x):
        u = controller(x, t) if takes_t else controller(x)
        return np.clip(np.atleast_1d(u), sys.u_lo, sys.u_hi)

    def dist_at(t, x):
        if sys.p == 0:
            return np.zeros(0)
        return np.clip(np.atleast_1d(disturbance(t, x)), sys.d_lo, sys.d_hi)

    def aug_field(z):
        x, t = z[:n], z[n]
        u = ctrl_at(t, x)
        d = dist_at(t, x)
        return np.concatenate([sys.eval_many(x[None], u[None], d[None])[0], [1.0]])

    n_log = int(round(T_sim / dt_log))
    ts = np.empty(n_log + 1)
    xs = np.empty((n_log + 1, n))
    us = np.empty((n_log + 1, sys.m))
    ds = np.empty((n_log + 1, max(sys.p, 0)))
    cs = np.empty(n_log + 1)
    z = np.concatenate([x0, [0.0]])
    for i in range(n_log + 1):
        t = i * dt_log
        x = z[:n]
        u = ctrl_at(t, x)
        d = dist_at(t, x)
        ts[i], xs[i], us[i], ds[i] = t, x, u, d
        cs[i] = cost_fn(x, u) if cost_fn is not None else 0.0
        if i < n_log:
            z = integrate(aug_field, z, dt_log, cfg)
            z[n] = (i + 1) * dt_log  # keep the clock exact on the lattice
    return Trajectory(t=ts, x=xs, u=us, d=ds, cost=cs)


def rollout_batch(sys: SystemModel, controller_many, disturbance_many,
                  X0: np.ndarray, T_sim: float, dt: float = 0.005,
                  trackers: dict | None = None):
    """Fixed-step RK4 rollout of many initial states in lockstep.

    ``controller_many``: (N, n) states -> (N, m); ``disturbance_many``:
    (t, X) -> (N, p).  ``trackers`` maps names to state functions whose
    running minimum over the horizon is recorded.  Used by the bulk safety
    oracles where per-trajectory adaptive integration would be too slow.
    """
    X = np.atleast_2d(np.asarray(X0, dtype=np.float64)).copy()
    mins = {k: fn(X) for k, fn in (trackers or {}).items()}

    def f(t, X):
        U = np.clip(controller_many(X), sys.u_lo, sys.u_hi)
        if sys.p == 0:
            D = np.zeros((X.shape[0], 0))
        else:
            D = np.clip(disturbance_many(t, X), sys.d_lo, sys.d_hi)
        return sys.eval_many(X, U, D)

    steps = int(round(T_sim / dt))
    t = 0.0
    for _ in range(steps):
        k1 = f(t, X)
        k2 = f(t + 0.5 * dt, X + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, X + 0.5 * dt * k2)
        k4 = f(t + dt, X + dt * k3)
        X = X + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
        for k, fn in (trackers or {}).items():
            np.minimum(mins[k], fn(X), out=mins[k])
    return X, mins


# ---------------------------------------------------------------------------
# scoring


def intervention_cost(traj: Trajectory, legacy, kappa: float,
                      sup_cost: float | None = None):
    """(discounted intervention integral, analytic tail bound).

    legacy: x -> u0 (scalar or vector).  The tail bound uses sup_cost (e.g.
    (2 a_max)^2 for the cruise-control box) when provided, else the largest
    observed cost sample.
    """
    if traj.u.shape[1] == 0:
        raise ValueError("trajectory carries no inputs")
    u0 = np.stack([np.atleast_1d(legacy(x)) for x in traj.x])
    integrand = np.exp(-kappa * traj.t) * np.sum((traj.u - u0) ** 2, axis=1)
    cost = float(np.trapezoid(integrand, traj.t))
    sup_c = float(sup_cost) if sup_cost is not None else float(
        np.max(np.sum((traj.u - u0) ** 2, axis=1)))
    tail = float(np.exp(-kappa * traj.t[-1]) * sup_c / kappa)
    return cost, tail


def safety_check(traj: Trajectory, d_min: float, gap_axis: int = 2):
    """(ok, min_D, first_violation_time) scanning the logged gap column."""
    if traj.t.shape[0] == 0:
        raise ValueError("no samples in trajectory")
    D = traj.x[:, gap_axis]
    min_d = float(D.min())
    ok = bool(min_d >= d_min)
    first = None
    if not ok:
        first = float(traj.t[int(np.argmax(D < d_min))])
    return ok, min_d, first


# ---------------------------------------------------------------------------
# comparison experiments (the figure-2 style sweeps)


@dataclass
class ComparisonSetup:
    """Everything the sweeps need to score one controller from one start."""

    sys: SystemModel
    params: AccParams
    gains: LqrGains
    density_policy: Policy
    d_policy: object = None        # worst-case disturbance table, optional
    cbf_mode: str = "worst_case"
    T_sim: float = 40.0
    dt_log: float = 0.01
    int_cfg: IntegratorConfig = dc_field(default_factory=lambda: SIM_CONFIG)

    def disturbance(self):
        if self.d_policy is not None:
            return table_disturbance(self.d_policy)
        return constant_disturbance([-self.params.a_max])

    def legacy_fn(self):
        g, p = self.gains, self.params
        return lambda x: np.array([legacy_control(g, p, x)])

    def _score(self, controller, x0):
        traj = rollout(self.sys, controller, self.disturbance(), x0,
                       self.T_sim, self.dt_log, self.int_cfg)
        kappa = self.params.kappa
        cost, tail = intervention_cost(traj, self.legacy_fn(), kappa,
                                       sup_cost=(2 * self.params.a_max) ** 2)
        ok, min_d, first = safety_check(traj, self.params.d_min)
        return {"cost": cost, "tail_bound": tail, "ok": ok, "min_D": min_d,
                "violation_time": first}

    def score_density(self, x0) -> dict:
        return self._score(make_table_controller(self.density_policy), x0)

    def score_cbf(self, x0, alpha: float) -> dict:
        cfg = CbfConfig(alpha_cbf=alpha, mode=self.cbf_mode)
        ctrl = make_cbf_controller(self.gains, self.params, cfg,
                                   disturbance=self.disturbance())
        return self._score(ctrl, x0)

    def score_legacy(self, x0) -> dict:
        return self._score(make_legacy_controller(self.gains, self.params), x0)


def sweep_cbf_alpha(setup: ComparisonSetup, alphas, x0) -> list:
    """Per-alpha CBF scores plus one density-policy row.

    Row errors are recorded in-place (controller keeps sweeping).
    """
    if len(alphas) == 0:
        raise ValueError("sweep needs at least one alpha")
    rows = []
    for alpha in alphas:
        row = {"alpha": float(alpha), "controller": "cbf"}
        try:
            row.update(setup.score_cbf(x0, alpha))
        except Exception as exc:  # row-level fault isolation
            row.update({"error": f"{type(exc).__name__}: {exc}"})
        rows.append(row)
    row = {"alpha": None, "controller": "density"}
    try:
        row.update(setup.score_density(x0))
    except Exception as exc:
        row.update({"error": f"{type(exc).__name__}: {exc}"})
    rows.append(row)
    return rows


def sweep_initial_conditions(setup: ComparisonSetup, x0_list,
                             alpha_ref: float) -> list:
    """Density vs CBF(alpha_ref) scores over a list of initial states.

    States with a negative barrier are flagged infeasible and not rolled
    out (no controller can keep them safe under worst-case lead braking).
    """
    if len(x0_list) == 0:
        raise ValueError("sweep needs at least one initial state")
    rows = []
    for x0 in x0_list:
        x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
        b0 = float(barrier_many(setup.params, x0[None])[0])
        row = {"v_l0": float(x0[0]), "v0": float(x0[1]), "D0": float(x0[2]),
               "b0": b0, "feasible": b0 >= 0.0}
        if row["feasible"]:
            for tag, score in (("density", setup.score_density),
                               ("cbf", lambda s: setup.score_cbf(s, alpha_ref))):
                try:
                    r = score(x0)
                    row[f"cost_{tag}"] = r["cost"]
                    row[f"ok_{tag}"] = r["ok"]
                    row[f"min_D_{tag}"] = r["min_D"]
                except Exception as exc:
                    row[f"error_{tag}"] = f"{type(exc).__name__}: {exc}"
                    row[f"ok_{tag}"] = False
        else:
            row["ok_density"] = False
            row["ok_cbf"] = False
        rows.append(row)
    return rows
