"""Command line interface: synth, simulate, compare, export-schema.

Configs are JSON; every run writes its fully resolved config next to its
outputs so results are reproducible byte for byte.  Exit codes: 0 success,
1 usage/config error, 2 synthesis did not converge (artifacts still
written).
"""

import argparse
import json
import sys as _sys
from pathlib import Path

import numpy as np

from densyn import backend
from densyn.baseline import CbfConfig, LegacyPolicy, design_lqr
from densyn.density import DensityConfig, SourceSpec
from densyn.field import (Box, EmptyRegion, GridField, HalfSpace, build_grid,
                          load_field)
from densyn.flow import SIM_CONFIG
from densyn.hjb import HjbConfig, intervention_cost_spec
from densyn.sim import (ComparisonSetup, constant_disturbance,
                        intervention_cost, make_cbf_controller,
                        make_legacy_controller, make_table_controller,
                        rollout, safety_check, sweep_cbf_alpha,
                        sweep_initial_conditions, table_disturbance)
from densyn.synth import (SafetySpec, SynthConfig, polish_multiplier,
                          synthesize_robust, synthesize_safe)
from densyn.system import (AccParams, ConstantPolicy, Policy, acc_system,
                           toy_system)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# defaults and config resolution

DEFAULTS = {
    "seed": 0,
    "threads": None,
    "system": {
        "kind": "acc",
        "params": {
            "v_max": 30.0, "a_max": 3.0, "d_min": 5.0, "tau_des": 1.4,
            "r_weight": 1.0, "d_axis_hi": 80.0,
            # kappa is required, never defaulted
        },
    },
    "grid": {"axes": [
        {"lo": 0.0, "hi": 30.0, "count": 31},
        {"lo": 0.0, "hi": 30.0, "count": 31},
        {"lo": 0.0, "hi": 80.0, "count": 41},
    ]},
    "danger": {"type": "gap_below", "value": 5.0},
    "source": {"type": "box", "lo": [11.0, 11.0, 25.0],
               "hi": [15.0, 15.0, 60.0], "amplitude": 1.0},
    "synth": {
        "mode": "robust",
        "polish": True,
        "alpha_step": 200.0,
        "eps": None,
        "max_outer": 50,
        "alpha_decay": False,
        "hjb": {"n_samples": 21, "eps_v": 1e-5, "max_sweeps": 40000,
                "dt_scale": 0.5, "dt_override": None},
        "game": None,
        "density": {"dt": 0.02, "eps_trunc_rel": 1e-6, "v_bound": 1e3,
                    "t_max": None, "div_mode": "table"},
    },
    "sim": {
        "controller": "policy",      # policy | legacy | cbf
        "policy_dir": None,
        "x0": [13.0, 13.0, 25.0],
        "t_sim": 40.0,
        "dt_log": 0.01,
        "disturbance": "worst_case",  # worst_case | zero | <number>
        "cbf_alpha": 1.0,
        "cbf_mode": "worst_case",
    },
    "compare": {
        "policy_dir": None,
        "x0": [13.0, 13.0, 25.0],
        "alphas": [0.2, 0.5, 1.0, 2.0, 5.0],
        "alpha_ref": 1.0,
        "ic_grid": {"v": [5.0, 25.0, 11], "D": [10.0, 60.0, 11], "v_l": 13.0},
        "t_sim": 40.0,
        "dt_log": 0.01,
        "use_dstar": True,
    },
}

SCHEMA_NOTES = {
    "system.params.kappa": "REQUIRED discount rate (1/s); no default",
    "system.kind": "acc | toy",
    "danger.type": "gap_below | box | halfspace | empty",
    "source.type": "box (indicator times amplitude)",
    "synth.mode": "safe (fixed disturbance) | robust (worst-case game)",
    "synth.eps": "stop tolerance; null means 1e-4 * sup(phi_plus)",
    "sim.disturbance": "worst_case (full braking / d* table) | zero | number",
    "compare.use_dstar": "use the exported d* table when present",
}


def _merge(base, override, path=""):
    if not isinstance(override, dict):
        return override
    out = dict(base) if isinstance(base, dict) else {}
    for k, v in override.items():
        out[k] = _merge(out.get(k), v, f"{path}.{k}" if path else k)
    return out


def resolve_config(user_cfg: dict) -> dict:
    cfg = _merge(DEFAULTS, user_cfg)
    params = cfg.get("system", {}).get("params", {})
    if "kappa" not in params:
        raise ConfigError("missing required key 'kappa' in system.params")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: line {exc.lineno}: {exc.msg}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return resolve_config(raw)


# ---------------------------------------------------------------------------
# builders


def build_system(cfg):
    kind = cfg["system"]["kind"]
    params = cfg["system"]["params"]
    if kind == "acc":
        p = AccParams.from_config(params)
        return acc_system(p), p
    if kind == "toy":
        u_max = float(params.get("u_max", 1.0))
        box = (float(params.get("box_lo", -1.0)), float(params.get("box_hi", 3.0)))
        return toy_system(u_max=u_max, box=box), None
    raise ConfigError(f"unknown system.kind {kind!r}")


def build_grid_from(cfg):
    axes = cfg["grid"]["axes"]
    try:
        return build_grid([(a["lo"], a["hi"], a["count"]) for a in axes])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad grid.axes: {exc}")


def build_danger(cfg, grid):
    d = cfg["danger"]
    t = d.get("type")
    if t == "empty":
        return EmptyRegion()
    if t == "gap_below":
        normal = np.zeros(grid.ndim)
        normal[-1] = 1.0
        return HalfSpace(normal, float(d["value"]), strict=True)
    if t == "box":
        return Box(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))
    if t == "halfspace":
        return HalfSpace(np.asarray(d["normal"], dtype=float),
                         float(d["offset"]), strict=bool(d.get("strict", False)))
    raise ConfigError(f"unknown danger.type {t!r}")


def build_source(cfg):
    s = cfg["source"]
    if s.get("type") != "box":
        raise ConfigError("source.type must be 'box' in configs")
    return SourceSpec(box=Box(np.asarray(s["lo"], dtype=float),
                              np.asarray(s["hi"], dtype=float)),
                      amplitude=float(s.get("amplitude", 1.0)))


def build_legacy(cfg, sys_model, acc_params):
    leg = cfg.get("legacy", {"type": "lqr"})
    if leg.get("type", "lqr") == "lqr":
        if acc_params is None:
            raise ConfigError("lqr legacy controller needs the acc system")
        return LegacyPolicy(design_lqr(acc_params), acc_params)
    if leg["type"] == "constant":
        return ConstantPolicy(np.atleast_1d(np.asarray(leg["value"], dtype=float)))
    raise ConfigError(f"unknown legacy.type {leg['type']!r}")


def build_synth_config(cfg) -> SynthConfig:
    s = cfg["synth"]
    hjb = HjbConfig(**{k: v for k, v in s["hjb"].items()})
    game = HjbConfig(**{k: v for k, v in s["game"].items()}) if s.get("game") else None
    dens = DensityConfig(**{k: v for k, v in s["density"].items()})
    return SynthConfig(alpha_step=float(s["alpha_step"]),
                       eps=None if s.get("eps") is None else float(s["eps"]),
                       max_outer=int(s["max_outer"]),
                       alpha_decay=bool(s.get("alpha_decay", False)),
                       hjb=hjb, game=game, density=dens)


def load_policy(policy_dir, prefix: str, lo, hi) -> Policy:
    policy_dir = Path(policy_dir)
    tables = []
    c = 0
    while (policy_dir / f"{prefix}_{c}.json").exists():
        tables.append(load_field(policy_dir / f"{prefix}_{c}"))
        c += 1
    if not tables:
        raise ConfigError(f"no {prefix}_* field exports found in {policy_dir}")
    return Policy(tables=tables, lo=lo, hi=hi)


# ---------------------------------------------------------------------------
# output helpers


def fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt_value(row.get(c)) for c in columns) + "\n")


def write_resolved_config(outdir, cfg) -> None:
    with open(Path(outdir) / "resolved_config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg, outdir, quiet=False) -> int:
    sys_model, acc_params = build_system(cfg)
    grid = build_grid_from(cfg)
    if grid.ndim != sys_model.n:
        raise ConfigError(f"grid has {grid.ndim} axes, system has {sys_model.n} states")
    danger = build_danger(cfg, grid)
    source = build_source(cfg)
    kappa = float(cfg["system"]["params"]["kappa"])
    legacy = build_legacy(cfg, sys_model, acc_params)
    cost = intervention_cost_spec(legacy, weight=1.0)
    safety = SafetySpec(danger=danger, source=source, kappa=kappa)
    scfg = build_synth_config(cfg)
    mode = cfg["synth"]["mode"]

    def progress(rec):
        if quiet:
            return
        if "polish_height" in rec:
            print(f"  polish height {rec['polish_height']:g}: "
                  f"danger_sup={rec['danger_sup']:.3e}")
        else:
            print(f"  iter {rec['iter']}: danger_sup={rec['danger_sup']:.3e} "
                  f"mass={rec['danger_mass']:.3e} gap={rec['gap']:.2%}")

    if mode == "robust":
        report = synthesize_robust(sys_model, cost, safety, grid, scfg, progress)
    elif mode == "safe":
        d_fixed = cfg["synth"].get("d_fixed", 0.0)
        d_pol = ConstantPolicy(np.atleast_1d(np.asarray(d_fixed, dtype=float))) \
            if sys_model.p else None
        report = synthesize_safe(sys_model, cost, safety, d_pol, grid, scfg, progress)
    else:
        raise ConfigError(f"synth.mode must be 'safe' or 'robust', got {mode!r}")
    if report.converged and cfg["synth"].get("polish", True):
        report = polish_multiplier(report, sys_model, cost, safety, grid, scfg,
                                   progress=progress if not quiet else None)
    report.meta["config"] = cfg
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out)
    write_resolved_config(out, cfg)
    if not quiet:
        print(f"{'converged' if report.converged else 'NOT converged'} in "
              f"{len(report.iterations)} outer iterations -> {out}")
    return 0 if report.converged else 2


def _sim_pieces(cfg, sys_model, acc_params):
    sim = cfg["sim"]
    gains = design_lqr(acc_params)
    dist_cfg = sim["disturbance"]
    d_policy = None
    if sim.get("policy_dir"):
        pd = Path(sim["policy_dir"])
        if (pd / "policy_d_0.json").exists():
            d_policy = load_policy(pd, "policy_d", sys_model.d_lo, sys_model.d_hi)
    if dist_cfg == "worst_case":
        dist = table_disturbance(d_policy) if d_policy is not None else \
            constant_disturbance([-acc_params.a_max])
    elif dist_cfg == "zero":
        dist = constant_disturbance([0.0])
    elif isinstance(dist_cfg, (int, float)):
        dist = constant_disturbance([float(dist_cfg)])
    else:
        raise ConfigError(f"bad sim.disturbance {dist_cfg!r}")

    kind = sim["controller"]
    if kind == "legacy":
        ctrl = make_legacy_controller(gains, acc_params)
    elif kind == "cbf":
        ctrl = make_cbf_controller(gains, acc_params,
                                   CbfConfig(alpha_cbf=float(sim["cbf_alpha"]),
                                             mode=sim["cbf_mode"]),
                                   disturbance=dist)
    elif kind == "policy":
        if not sim.get("policy_dir"):
            raise ConfigError("sim.controller='policy' needs sim.policy_dir")
        pol = load_policy(sim["policy_dir"], "policy_u",
                          sys_model.u_lo, sys_model.u_hi)
        ctrl = make_table_controller(pol)
    else:
        raise ConfigError(f"unknown sim.controller {kind!r}")
    return ctrl, dist, gains


def cmd_simulate(cfg, outdir, quiet=False) -> int:
    sys_model, acc_params = build_system(cfg)
    if acc_params is None:
        raise ConfigError("simulate currently drives the acc system")
    sim = cfg["sim"]
    if "x0" not in sim or sim["x0"] is None:
        raise ConfigError("missing required key 'x0' in sim")
    ctrl, dist, gains = _sim_pieces(cfg, sys_model, acc_params)
    x0 = np.asarray(sim["x0"], dtype=float)
    kappa = float(cfg["system"]["params"]["kappa"])
    legacy_fn = lambda x: np.array([make_legacy_controller(gains, acc_params)(x)[0]])
    traj = rollout(sys_model, ctrl, dist, x0, float(sim["t_sim"]),
                   float(sim["dt_log"]), SIM_CONFIG)
    cost, tail = intervention_cost(traj, legacy_fn, kappa,
                                   sup_cost=(2 * acc_params.a_max) ** 2)
    ok, min_d, first = safety_check(traj, acc_params.d_min)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv")
    summary = {"cost": cost, "tail_bound": tail, "ok": ok, "min_D": min_d,
               "violation_time": first, "config": cfg}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_resolved_config(out, cfg)
    if not quiet:
        print(f"cost={cost:.4f} min_D={min_d:.3f} ok={ok} -> {out}")
    return 0


FIG2A_COLUMNS = ("t", "v_l", "v", "D", "u", "u0", "a_l", "d_min")
FIG2B_COLUMNS = ("alpha", "controller", "cost", "tail_bound", "min_D", "ok",
                 "violation_time")
FIG2C_COLUMNS = ("v_l0", "v0", "D0", "b0", "feasible", "cost_density",
                 "cost_cbf", "ok_density", "ok_cbf", "min_D_density",
                 "min_D_cbf")


def cmd_compare(cfg, outdir, quiet=False) -> int:
    sys_model, acc_params = build_system(cfg)
    if acc_params is None:
        raise ConfigError("compare drives the acc system")
    comp = cfg["compare"]
    if not comp.get("policy_dir"):
        raise ConfigError("compare.policy_dir (a synth output directory) is required")
    pd = Path(comp["policy_dir"])
    policy = load_policy(pd, "policy_u", sys_model.u_lo, sys_model.u_hi)
    d_policy = None
    if comp.get("use_dstar", True) and (pd / "policy_d_0.json").exists():
        d_policy = load_policy(pd, "policy_d", sys_model.d_lo, sys_model.d_hi)
    gains = design_lqr(acc_params)
    setup = ComparisonSetup(sys=sys_model, params=acc_params, gains=gains,
                            density_policy=policy, d_policy=d_policy,
                            T_sim=float(comp["t_sim"]),
                            dt_log=float(comp["dt_log"]))
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    x0 = np.asarray(comp["x0"], dtype=float)

    # fig 2a: one rollout of the synthesized controller under worst case
    traj = rollout(sys_model, make_table_controller(policy), setup.disturbance(),
                   x0, setup.T_sim, setup.dt_log)
    leg = setup.legacy_fn()
    rows = []
    for i in range(traj.t.shape[0]):
        rows.append({
            "t": traj.t[i], "v_l": traj.x[i, 0], "v": traj.x[i, 1],
            "D": traj.x[i, 2], "u": traj.u[i, 0],
            "u0": float(leg(traj.x[i])[0]), "a_l": traj.d[i, 0],
            "d_min": acc_params.d_min,
        })
    write_csv(out / "fig2a_trajectory.csv", FIG2A_COLUMNS, rows)

    # fig 2b: cost vs alpha plus the density reference row
    rows_b = sweep_cbf_alpha(setup, comp["alphas"], x0)
    write_csv(out / "fig2b_alpha_sweep.csv", FIG2B_COLUMNS, rows_b)

    # fig 2c: density vs cbf over the initial-condition grid
    icg = comp["ic_grid"]
    v_vals = np.linspace(icg["v"][0], icg["v"][1], int(icg["v"][2]))
    d_vals = np.linspace(icg["D"][0], icg["D"][1], int(icg["D"][2]))
    x0_list = [np.array([icg["v_l"], v, D]) for v in v_vals for D in d_vals]
    rows_c = sweep_initial_conditions(setup, x0_list, float(comp["alpha_ref"]))
    write_csv(out / "fig2c_grid_sweep.csv", FIG2C_COLUMNS, rows_c)
    write_resolved_config(out, cfg)
    if not quiet:
        ok_b = all(r.get("ok") for r in rows_b)
        print(f"compare written to {out} (all fig2b rows safe: {ok_b})")
    return 0


def cmd_export_schema(outdir) -> int:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"defaults": DEFAULTS, "notes": SCHEMA_NOTES}
    with open(out / "config_schema.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"schema -> {out / 'config_schema.json'}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="densyn",
        description="Safe optimal controller synthesis via density/value duality")
    parser.add_argument("--threads", type=int, default=None,
                        help="numba thread count (env DENSYN_THREADS)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override config seed")
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "simulate", "compare"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
    p = sub.add_parser("export-schema")
    p.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    try:
        backend.set_threads(args.threads)
        if args.command == "export-schema":
            return cmd_export_schema(args.out)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"output directory not writable: {out} ({exc})")
        if args.command == "synth":
            return cmd_synth(cfg, out, args.quiet)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.quiet)
        if args.command == "compare":
            return cmd_compare(cfg, out, args.quiet)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
