"""Primal-dual synthesis loops and the duality-gap diagnostic.

The safety-constrained optimal control problem is solved by alternating a
perturbed HJB solve (primal) with a stationary-density evaluation (dual):
the multiplier field sigma, supported on the danger set, grows wherever
density mass persists in danger, and the loop stops when the sup-norm of
density inside danger falls below eps.  The robust variant inserts a
worst-case-disturbance game before each density evaluation.

At a converged primal-dual pair there is no duality gap: the source-weighted
value integral equals the density-weighted running-cost integral.  Both
sides are computed here independently (HJB sweep vs characteristic
integration), so the reported gap doubles as an end-to-end consistency
check of the two solvers.
"""

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from densyn.density import (DensityConfig, SourceSpec, danger_mass,
                            liouville_residual, splat_density,
                            stationary_density)
from densyn.field import (Box, Grid, GridField, Region, box_quadrature_weights,
                          indicator_field, inner_product, save_field,
                          sup_norm_on)
from densyn.hjb import (CostSpec, HjbConfig, greedy_policy,
                        solve_disturbance_game, solve_hjb)
from densyn.system import (ClosedLoopField, ConstantPolicy, Policy,
                           SystemModel, closed_loop_field)


@dataclass(frozen=True)
class SafetySpec:
    """Danger region, supply, and discount rate of one synthesis problem."""

    danger: Region
    source: SourceSpec
    kappa: float

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


@dataclass(frozen=True)
class SynthConfig:
    alpha_step: float = 50.0
    eps: float | None = None      # default 1e-4 * sup(phi_plus)
    max_outer: int = 50
    alpha_decay: bool = False     # alpha_step / k schedule
    splat_particles: int = 8      # per-axis source particles for the stop test
    hjb: HjbConfig = dc_field(default_factory=HjbConfig)
    game: HjbConfig | None = None  # defaults to hjb config
    density: DensityConfig = dc_field(default_factory=DensityConfig)

    def __post_init__(self):
        if self.alpha_step <= 0:
            raise ValueError("alpha_step must be positive")
        if self.eps is not None and self.eps <= 0:
            raise ValueError("eps must be positive")

    def stop_eps(self, src: SourceSpec) -> float:
        return self.eps if self.eps is not None else 1e-4 * src.sup


@dataclass
class SynthesisReport:
    converged: bool
    iterations: list
    eps: float
    policy: Policy | None = None
    V: GridField | None = None
    rho_s: GridField | None = None
    rho_splat: GridField | None = None
    sigma: GridField | None = None
    d_policy: object = None
    Vd: GridField | None = None
    meta: dict = dc_field(default_factory=dict)

    CSV_COLUMNS = ("iter", "danger_sup", "danger_mass", "primal", "dual",
                   "gap", "hjb_resid", "liouville_resid")

    def iteration_table(self) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for rec in self.iterations:
            lines.append(",".join(
                repr(float(rec[c])) if c != "iter" else str(rec[c])
                for c in self.CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "converged": self.converged,
            "eps": self.eps,
            "iterations": self.iterations,
            "meta": self.meta,
        }

    def write(self, outdir) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "convergence.csv", "w") as fh:
            fh.write(self.iteration_table())
        if self.V is not None:
            save_field(self.V, out / "value")
        if self.rho_s is not None:
            save_field(self.rho_s, out / "density")
        if self.rho_splat is not None:
            save_field(self.rho_splat, out / "density_splat")
        if self.sigma is not None:
            save_field(self.sigma, out / "sigma")
        if self.policy is not None:
            for c, tab in enumerate(self.policy.tables):
                save_field(tab, out / f"policy_u_{c}")
        if self.d_policy is not None and isinstance(self.d_policy, Policy):
            for c, tab in enumerate(self.d_policy.tables):
                save_field(tab, out / f"policy_d_{c}")
        if self.Vd is not None:
            save_field(self.Vd, out / "disturbance_value")


def duality_gap(V: GridField, src: SourceSpec, rho_s: GridField,
                cost: CostSpec, u_policy, floor: float = 1e-12):
    """(primal, dual, relative gap).

    primal = <V, phi_plus> (exact for the V-interpolant when phi_plus is a
    box); dual = <rho_s, C_{u*}> by trapezoid quadrature.
    """
    grid = V.grid
    if src.box is not None:
        w = box_quadrature_weights(grid, src.box.lo, src.box.hi)
        primal = float(src.amplitude * np.sum(w * V.values))
    else:
        primal = inner_product(V, src.as_field(grid))
    X = grid.nodes()
    U = u_policy.eval_many(X)
    c_u = GridField(grid, cost.eval_nodes(X, U), role="running_cost")
    dual = inner_product(rho_s, c_u)
    gap = abs(primal - dual) / max(abs(primal), floor)
    return primal, dual, gap


def _sigma_update(sigma_vals: np.ndarray, rho_vals: np.ndarray,
                  danger_ind: np.ndarray, alpha: float) -> np.ndarray:
    new = np.maximum(0.0, sigma_vals + alpha * rho_vals * danger_ind)
    assert (new >= 0.0).all()
    assert (new[danger_ind == 0.0] == 0.0).all(), "sigma must vanish off danger"
    return new


def _as_d_policy(sys: SystemModel, d_fixed):
    if sys.p == 0:
        return None
    if d_fixed is None:
        raise ValueError("system has a disturbance channel; d_fixed required")
    if isinstance(d_fixed, (Policy, ConstantPolicy)):
        return d_fixed
    return ConstantPolicy(np.atleast_1d(np.asarray(d_fixed, dtype=np.float64)))


def _run_primal_dual(sys: SystemModel, cost: CostSpec, safety: SafetySpec,
                     grid: Grid, cfg: SynthConfig, d_fixed, robust: bool,
                     progress=None) -> SynthesisReport:
    kappa = safety.kappa
    src = safety.source
    eps = cfg.stop_eps(src)
    game_cfg = cfg.game if cfg.game is not None else cfg.hjb
    danger_ind = indicator_field(grid, safety.danger).values
    sigma = np.zeros(grid.num_nodes)
    d_policy = _as_d_policy(sys, d_fixed)
    v_warm = None
    vd_warm = None
    iters = []
    converged = False
    policy = V = rho = rho_splat = Vd = None
    d_cur = d_policy
    for k in range(1, cfg.max_outer + 1):
        sigma_field = GridField(grid, sigma, role="multiplier")
        sol = solve_hjb(sys, cost, kappa, sigma_field, d_cur, grid, cfg.hjb,
                        v0=v_warm, robust_d=robust)
        v_warm = sol.V.values
        V = sol.V
        # the shipped controller is the solver's own per-node minimizer,
        # interpolated (the continuous grid-array controller); the
        # gradient-based greedy policy is kept for the backward-density
        # diagnostics, where the staircase table's divergence spikes would
        # corrupt the characteristic integrals
        policy = sol.policy
        if cost.quadratic and sys.control_affine:
            diag_policy = greedy_policy(V, sys, cost, sigma_field, d_cur, cfg.hjb)
        else:
            diag_policy = sol.policy
        if robust:
            Vd, d_game, game_sweeps = solve_disturbance_game(
                sys, policy, safety.danger, kappa, grid, game_cfg, v0=vd_warm)
            vd_warm = Vd.values
            d_cur = d_game
        clf_diag = closed_loop_field(sys, diag_policy, d_cur)
        dres = stationary_density(clf_diag, src, kappa, grid, cfg.density)
        rho = dres.field
        # the stop test and multiplier update run on the conservative
        # push-forward estimate under the shipped policy itself: mass
        # concentrating on saturation faces or attractors is invisible to
        # pointwise backward sampling but must still drive sigma up
        clf_cert = closed_loop_field(sys, policy, d_cur)
        rho_splat = splat_density(clf_cert, src, kappa, grid, cfg.density,
                                  cfg.splat_particles)
        sup_d = sup_norm_on(rho_splat, safety.danger) if danger_ind.any() else 0.0
        mass = danger_mass(rho_splat, safety.danger)
        primal, dual, gap = duality_gap(V, src, rho, cost, diag_policy)
        liou = liouville_residual(rho, clf_diag, src, kappa)
        rec = {
            "iter": k,
            "danger_sup": float(sup_d),
            "danger_mass": float(mass),
            "primal": float(primal),
            "dual": float(dual),
            "gap": float(gap),
            "hjb_resid": float(sol.residual_sup),
            "liouville_resid": float(np.abs(liou.values).max()),
            "hjb_sweeps": sol.sweeps,
            "danger_sup_pointwise": float(
                sup_norm_on(rho, safety.danger) if danger_ind.any() else 0.0),
            "density_raw_min": dres.raw_min,
            "density_invalid_nodes": int((dres.flags != 0).sum()),
        }
        if robust:
            rec["game_sweeps"] = game_sweeps
        iters.append(rec)
        if progress is not None:
            progress(rec)
        alpha_k = cfg.alpha_step / k if cfg.alpha_decay else cfg.alpha_step
        sigma = _sigma_update(sigma, rho_splat.values, danger_ind, alpha_k)
        if sup_d <= eps:
            converged = True
            break
    report = SynthesisReport(
        converged=converged, iterations=iters, eps=eps, policy=policy, V=V,
        rho_s=rho, rho_splat=rho_splat,
        sigma=GridField(grid, sigma, role="multiplier"),
        d_policy=d_cur if robust else d_policy, Vd=Vd,
        meta={"robust": robust, "alpha_step": cfg.alpha_step,
              "max_outer": cfg.max_outer, "kappa": kappa,
              "grid": grid.axes_spec()},
    )
    return report


def synthesize_safe(sys: SystemModel, cost: CostSpec, safety: SafetySpec,
                    d_fixed, grid: Grid, cfg: SynthConfig = SynthConfig(),
                    progress=None) -> SynthesisReport:
    """Fixed-disturbance primal-dual synthesis.

    sigma starts at zero; each outer iteration solves the perturbed HJB,
    evaluates the stationary density under the resulting policy and the
    fixed disturbance, and raises sigma by alpha * rho_s on danger nodes,
    until sup of rho_s over danger nodes is at most eps.  A non-converged
    run returns a report flagged converged=False with the full history; it
    never silently passes off an unsafe controller.
    """
    return _run_primal_dual(sys, cost, safety, grid, cfg, d_fixed,
                            robust=False, progress=progress)


def polish_multiplier(rep: SynthesisReport, sys: SystemModel, cost: CostSpec,
                      safety: SafetySpec, grid: Grid, cfg: SynthConfig,
                      heights=(1e2, 3e2, 1e3, 3e3, 1e4, 3e4, 1e5),
                      progress=None) -> SynthesisReport:
    """Cheapest certified controller: shrink the multiplier's height.

    The converged multiplier's support is what matters; its magnitude only
    adds conservatism (the value cliff diffuses outward with log height).
    Re-solve with sigma capped at increasing heights, re-run the
    disturbance game and the push-forward certificate, and keep the first
    (smallest) height whose danger deposits still pass the stop test.
    The report's iteration history is left untouched; the polished
    artifacts replace the shipped ones and the step is recorded in meta.
    """
    if not rep.converged or rep.sigma is None:
        return rep
    robust = bool(rep.meta.get("robust"))
    kappa = safety.kappa
    game_cfg = cfg.game if cfg.game is not None else cfg.hjb
    sig = rep.sigma.values
    if sig.max() <= 0:
        return rep
    for height in sorted(heights):
        if height >= sig.max():
            break
        capped = GridField(grid, np.minimum(sig, height), role="multiplier")
        sol = solve_hjb(sys, cost, kappa, capped, rep.d_policy, grid, cfg.hjb,
                        v0=rep.V.values, robust_d=robust)
        if robust:
            Vd, d_pol, _ = solve_disturbance_game(
                sys, sol.policy, safety.danger, kappa, grid, game_cfg,
                v0=None if rep.Vd is None else rep.Vd.values)
        else:
            Vd, d_pol = rep.Vd, rep.d_policy
        clf = closed_loop_field(sys, sol.policy, d_pol)
        splat = splat_density(clf, safety.source, kappa, grid, cfg.density,
                              cfg.splat_particles)
        sup_d = sup_norm_on(splat, safety.danger)
        if progress is not None:
            progress({"polish_height": height, "danger_sup": float(sup_d)})
        if sup_d <= rep.eps:
            rep.policy = sol.policy
            rep.V = sol.V
            rep.sigma = capped
            rep.d_policy = d_pol
            rep.Vd = Vd
            rep.rho_splat = splat
            rep.meta["polish_height"] = float(height)
            rep.meta["polish_danger_sup"] = float(sup_d)
            return rep
    rep.meta["polish_height"] = None
    return rep


def synthesize_robust(sys: SystemModel, cost: CostSpec, safety: SafetySpec,
                      grid: Grid, cfg: SynthConfig = SynthConfig(),
                      progress=None) -> SynthesisReport:
    """Robust primal-dual synthesis (worst-case state-feedback disturbance).

    Each outer iteration solves the perturbed HJB in minimax form (inputs
    against the worst disturbance-box vertex), computes the worst-case
    disturbance policy for the resulting controller (a discounted
    danger-occupancy game), and evaluates the stationary density under
    that disturbance before updating the multiplier.
    """
    if sys.p == 0:
        raise ValueError("robust synthesis needs a disturbance channel")
    d0 = ConstantPolicy(0.5 * (sys.d_lo + sys.d_hi))
    return _run_primal_dual(sys, cost, safety, grid, cfg, d0,
                            robust=True, progress=progress)
