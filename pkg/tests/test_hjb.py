import numpy as np
import pytest

from densyn.field import Box, GridField, build_grid, interpolate
from densyn.hjb import (CostSpec, HjbConfig, SweepOperator, greedy_policy,
                        hjb_residual, intervention_cost_spec,
                        solve_disturbance_game, solve_hjb)
from densyn.system import (AccParams, ConstantPolicy, acc_system,
                           toy_system)

P_RICCATI = (np.sqrt(5.0) - 1.0) / 2.0  # root of 1 - p^2 - p = 0


@pytest.fixture(scope="module")
def toy():
    return toy_system(u_max=2.0, box=(-2.0, 2.0))


@pytest.fixture(scope="module")
def toy_cost():
    # C = x^2 + u^2: quadratic in u around zero plus a state term
    return CostSpec(quad_weight=1.0, center=ConstantPolicy([0.0]),
                    state_cost=lambda X: X[:, 0] ** 2)


@pytest.fixture(scope="module")
def toy_solution(toy, toy_cost):
    grid = build_grid([(-2.0, 2.0, 401)])
    sol = solve_hjb(toy, toy_cost, kappa=1.0, sigma=None, d_policy=None,
                    grid=grid, cfg=HjbConfig(n_samples=81, eps_v=1e-8))
    return grid, sol


def test_toy_riccati_value(toy_solution):
    grid, sol = toy_solution
    v1 = interpolate(sol.V, [1.0])
    assert v1 == pytest.approx(P_RICCATI, rel=0.02)


def test_zero_cost_gives_zero_value(toy):
    grid = build_grid([(-2.0, 2.0, 51)])
    cost = CostSpec(fn=lambda X, U: np.zeros(X.shape[0]))
    sol = solve_hjb(toy, cost, kappa=1.0, sigma=None, d_policy=None,
                    grid=grid, cfg=HjbConfig(n_samples=11))
    assert np.array_equal(sol.V.values, np.zeros(grid.num_nodes))


def test_acc_unconstrained_value_zero_policy_legacy():
    # with C = ||u - u0||^2 and no multiplier the legacy input is free:
    # V = 0 and u* = clip(u0)
    p = AccParams()
    sys = acc_system(p)
    from densyn.baseline import LegacyPolicy, design_lqr
    legacy = LegacyPolicy(design_lqr(p), p)
    cost = intervention_cost_spec(legacy, weight=1.0)
    grid = build_grid([(0, 30, 11), (0, 30, 11), (0, 80, 11)])
    sol = solve_hjb(sys, cost, kappa=p.kappa, sigma=None,
                    d_policy=ConstantPolicy([0.0]), grid=grid,
                    cfg=HjbConfig(n_samples=11))
    assert np.array_equal(sol.V.values, np.zeros(grid.num_nodes))
    assert sol.sweeps == 1
    u0 = legacy.eval_many(grid.nodes())
    assert np.allclose(sol.policy.table_array()[0], u0[:, 0], atol=1e-12)


def test_greedy_policy_toy_closed_form(toy, toy_cost, toy_solution):
    grid, sol = toy_solution
    pol = greedy_policy(sol.V, toy, toy_cost, None, None)
    for x in (-1.5, -0.5, 0.4, 1.2):
        assert pol([x])[0] == pytest.approx(-P_RICCATI * x, abs=0.02)


def test_greedy_policy_zero_value_returns_center(toy):
    grid = build_grid([(-2.0, 2.0, 41)])
    cost = intervention_cost_spec(ConstantPolicy([0.7]), weight=1.0)
    V0 = GridField(grid, np.zeros(grid.num_nodes))
    pol = greedy_policy(V0, toy, cost, None, None)
    assert np.allclose(pol.table_array()[0], 0.7, atol=1e-14)


def test_greedy_discrete_matches_closed_form_on_acc(rng):
    # oracle cross-check of the two minimizers: agreement within one
    # input-sample spacing
    p = AccParams()
    sys = acc_system(p)
    grid = build_grid([(0, 30, 9), (0, 30, 9), (0, 80, 11)])
    vals = rng.normal(size=grid.num_nodes).cumsum() / grid.num_nodes
    V = GridField(grid, vals * 10.0)
    from densyn.baseline import LegacyPolicy, design_lqr
    cost = intervention_cost_spec(LegacyPolicy(design_lqr(p), p), weight=1.0)
    closed = greedy_policy(V, sys, cost, None, ConstantPolicy([0.0]))
    discrete_cost = CostSpec(fn=lambda X, U: cost.eval_nodes(X, U))
    n_samples = 61
    discrete = greedy_policy(V, sys, discrete_cost, None, ConstantPolicy([0.0]),
                             HjbConfig(n_samples=n_samples))
    spacing = (sys.u_hi[0] - sys.u_lo[0]) / (n_samples - 1)
    idx = rng.choice(grid.num_nodes, 100, replace=False)
    diff = np.abs(closed.table_array()[0][idx] - discrete.table_array()[0][idx])
    assert diff.max() <= spacing + 1e-12


def test_disturbance_game_invariant_danger_region():
    # danger everywhere: V^d = 1/kappa regardless of play
    p = AccParams()
    sys = acc_system(p)
    grid = build_grid([(0, 30, 7), (0, 30, 7), (0, 80, 9)])
    kappa = 0.5
    danger = Box([0, 0, 0], [30, 30, 80])
    Vd, dpol, sweeps = solve_disturbance_game(
        sys, ConstantPolicy([0.0]), danger, kappa, grid,
        HjbConfig(n_samples=5, eps_v=1e-10))
    assert np.allclose(Vd.values, 1.0 / kappa, atol=1e-6)


def test_disturbance_game_unreachable_danger_zero():
    p = AccParams()
    sys = acc_system(p)
    grid = build_grid([(0, 30, 7), (0, 30, 7), (0, 80, 9)])
    from densyn.field import EmptyRegion
    Vd, dpol, _ = solve_disturbance_game(
        sys, ConstantPolicy([0.0]), EmptyRegion(), 0.5, grid,
        HjbConfig(n_samples=5))
    assert np.array_equal(Vd.values, np.zeros(grid.num_nodes))


def test_disturbance_game_value_bounds_and_braking():
    # worst case for the gap constraint is lead braking: d* = -a_max on
    # states that can still be dragged into danger
    p = AccParams()
    sys = acc_system(p)
    grid = build_grid([(0, 30, 11), (0, 30, 11), (0, 80, 16)])
    from densyn.field import HalfSpace
    danger = HalfSpace([0.0, 0.0, 1.0], p.d_min, strict=True)
    from densyn.baseline import LegacyPolicy, design_lqr
    Vd, dpol, _ = solve_disturbance_game(
        sys, LegacyPolicy(design_lqr(p), p), danger, p.kappa, grid,
        HjbConfig(n_samples=21, eps_v=1e-6))
    assert (Vd.values >= 0).all() and (Vd.values <= 1.0 / p.kappa + 1e-12).all()
    nodes = grid.nodes()
    # critical band: close gap at speed, where braking is clearly worst
    band = (nodes[:, 2] > 8) & (nodes[:, 2] < 30) & (nodes[:, 1] >= nodes[:, 0]) \
        & (Vd.values > 0.05)
    dvals = dpol.table_array()[0]
    frac_braking = np.mean(dvals[band] == -p.a_max)
    assert frac_braking > 0.9


def test_hjb_residual_trivial_cases(toy):
    grid = build_grid([(-2.0, 2.0, 41)])
    zero_cost = CostSpec(fn=lambda X, U: np.zeros(X.shape[0]))
    pol = ConstantPolicy([0.0])

    class ZeroPol:
        def eval_many(self, X):
            return np.zeros((np.atleast_2d(X).shape[0], 1))

    V0 = GridField(grid, np.zeros(grid.num_nodes))
    r = hjb_residual(V0, ZeroPol(), toy, zero_cost, 1.0, None, None)
    assert np.array_equal(r.values, np.zeros(grid.num_nodes))
    Vc = GridField(grid, np.full(grid.num_nodes, 3.0))
    r = hjb_residual(Vc, ZeroPol(), toy, zero_cost, 0.7, None, None)
    assert np.allclose(r.values, -0.7 * 3.0, atol=1e-12)


def test_hjb_residual_halves_under_refinement(toy, toy_cost):
    sups = []
    for n in (201, 401):
        grid = build_grid([(-2.0, 2.0, n)])
        sol = solve_hjb(toy, toy_cost, kappa=1.0, sigma=None, d_policy=None,
                        grid=grid, cfg=HjbConfig(n_samples=81, eps_v=1e-8))
        sups.append(sol.residual_sup)
    ratio = sups[1] / sups[0]
    assert 0.4 <= ratio <= 0.6


def test_sweep_is_contraction(toy, toy_cost, rng):
    grid = build_grid([(-2.0, 2.0, 101)])
    op = SweepOperator(toy, toy_cost, 1.0, None, grid, HjbConfig(n_samples=21))
    for _ in range(10):
        v1 = rng.normal(size=grid.num_nodes)
        v2 = rng.normal(size=grid.num_nodes)
        t1, _ = op.sweep(v1)
        t2, _ = op.sweep(v2)
        lhs = np.abs(t1 - t2).max()
        rhs = op.gamma * np.abs(v1 - v2).max()
        assert lhs <= rhs + 1e-9


def test_bellman_consistency_of_greedy_rerun(toy, toy_cost, toy_solution):
    grid, sol = toy_solution
    again = greedy_policy(sol.V, toy, toy_cost, None, None)
    assert np.allclose(again.table_array(),
                       greedy_policy(sol.V, toy, toy_cost, None, None).table_array())


def test_sigma_monotone_perturbation(toy, toy_cost):
    # raising sigma pointwise never lowers V
    grid = build_grid([(-2.0, 2.0, 101)])
    danger = Box([1.0], [2.0])
    from densyn.field import indicator_field
    ind = indicator_field(grid, danger).values
    lo = GridField(grid, 0.5 * ind)
    hi = GridField(grid, 2.0 * ind)
    cfg = HjbConfig(n_samples=41, eps_v=1e-9)
    v_lo = solve_hjb(toy, toy_cost, 1.0, lo, None, grid, cfg).V.values
    v_hi = solve_hjb(toy, toy_cost, 1.0, hi, None, grid, cfg).V.values
    assert (v_hi >= v_lo - 1e-7).all()


def test_solve_hjb_rejects_negative_sigma(toy, toy_cost):
    grid = build_grid([(-2.0, 2.0, 21)])
    bad = GridField(grid, np.full(grid.num_nodes, -1.0))
    with pytest.raises(ValueError):
        solve_hjb(toy, toy_cost, 1.0, bad, None, grid)
