import numpy as np
import pytest

from densyn.field import build_grid
from densyn.system import (AccParams, ConstantPolicy, acc_system,
                           closed_loop_field, divergence, divergence_many,
                           policy_from_callable, toy_system)


@pytest.fixture()
def acc():
    return acc_system(AccParams())


def test_acc_equal_speeds_zero_accels(acc):
    assert np.allclose(acc.eval([13, 13, 25], [0.0], [0.0]), [0, 0, 0])


def test_acc_hand_evaluation(acc):
    # xdot = (a_l, a, v_l - v) at x=(10,20,60), u=-3, d=1
    assert np.allclose(acc.eval([10, 20, 60], [-3.0], [1.0]), [1, -3, -10])


def test_acc_saturation_at_zero_lead_velocity(acc):
    # d=-1 pushes v_l below 0: that component is projected out
    assert np.allclose(acc.eval([0, 5, 40], [1.0], [-1.0]), [0, 1, -5])


def test_acc_matches_model_on_random_interior_points(acc, rng):
    # exact arithmetic identity away from the state-box faces
    X = rng.uniform([1, 1, 1], [29, 29, 79], size=(1000, 3))
    U = rng.uniform(-3, 3, size=(1000, 1))
    D = rng.uniform(-3, 3, size=(1000, 1))
    f = acc.eval_many(X, U, D)
    expect = np.stack([D[:, 0], U[:, 0], X[:, 0] - X[:, 1]], axis=1)
    assert np.array_equal(f, expect)


def test_acc_params_validation():
    with pytest.raises(ValueError):
        AccParams(a_max=-1.0)
    with pytest.raises(ValueError):
        AccParams(tau_des=3.0, d_axis_hi=80.0)  # tau*v_max exceeds gap axis


def test_toy_system_basics():
    toy = toy_system()
    assert toy.eval([0.5], [1.0])[0] == 1.0
    assert toy.eval([-2.0], [-1.0])[0] == -1.0
    assert toy.eval([0.3], [0.0])[0] == 0.0


def test_closed_loop_zero_policies(acc):
    clf = closed_loop_field(acc, ConstantPolicy([0.0]), ConstantPolicy([0.0]))
    f = clf([10.0, 12.0, 30.0])
    assert np.allclose(f, [0.0, 0.0, -2.0])


def test_closed_loop_linear_feedback_toy():
    toy = toy_system(u_max=1.0)
    grid = build_grid([(-2.0, 2.0, 81)])
    pol = policy_from_callable(grid, lambda x: -x, toy.u_lo, toy.u_hi)
    clf = closed_loop_field(toy, pol)
    for x in (-0.8, 0.0, 0.35):
        assert clf([x])[0] == pytest.approx(-np.clip(x, -1, 1), abs=1e-12)


def test_closed_loop_table_matches_interp_at_nodes(acc, rng):
    grid = build_grid([(0, 30, 7), (0, 30, 7), (0, 80, 9)])
    vals = rng.uniform(-3, 3, size=grid.num_nodes)
    from densyn.field import GridField
    from densyn.system import Policy
    pol = Policy([GridField(grid, vals)], acc.u_lo, acc.u_hi)
    clf = closed_loop_field(acc, pol, ConstantPolicy([0.0]))
    nodes = grid.nodes()
    interior = np.all((nodes > acc.state_lo) & (nodes < acc.state_hi), axis=1)
    sample = rng.choice(np.nonzero(interior)[0], size=30, replace=False)
    for i in sample:
        f = clf(nodes[i])
        assert f[1] == pytest.approx(vals[i], abs=1e-12)


def test_divergence_constant_input_acc_is_zero(acc, rng):
    clf = closed_loop_field(acc, ConstantPolicy([1.5]), ConstantPolicy([-2.0]))
    X = rng.uniform([2, 2, 5], [28, 28, 75], size=(200, 3))
    div = divergence_many(clf, X, 0.25)
    assert np.abs(div).max() < 1e-9


def test_divergence_linear_feedback():
    toy = toy_system(u_max=5.0, box=(-3.0, 3.0))
    grid = build_grid([(-3.0, 3.0, 241)])
    pol = policy_from_callable(grid, lambda x: -x, toy.u_lo, toy.u_hi)
    clf = closed_loop_field(toy, pol)
    assert divergence(clf, [0.7], 1e-4) == pytest.approx(-1.0, abs=1e-8)


def test_divergence_identity_field_equals_dimension():
    class Identity:
        def eval_many(self, X):
            return np.atleast_2d(X).copy()

    assert divergence(Identity(), [0.3, -0.4], 1e-5) == pytest.approx(2.0, abs=1e-8)


def test_saturated_rollouts_stay_in_box(acc, rng):
    # Euler rollouts under aggressive inputs never leave the box by more
    # than one step's excursion (dt * a_max): the projected field pins the
    # state at a face once it is crossed
    X = rng.uniform(acc.state_lo, acc.state_hi, size=(100, 3))
    dt = 0.01
    slack = dt * 3.0 * (1 + 30)  # one step of the fastest component
    for _ in range(500):
        U = rng.uniform(-3, 3, size=(100, 1))
        D = rng.uniform(-3, 3, size=(100, 1))
        X = X + dt * acc.eval_many(X, U, D)
        assert (X >= acc.state_lo - slack).all()
        assert (X <= acc.state_hi + slack).all()
