import numpy as np
import pytest

from densyn.flow import (DENSITY_CONFIG, IntegrationError, IntegratorConfig,
                         Trajectory, flow_backward, integrate)


def test_scalar_exponential_decay():
    # oracle: x' = -x from 1 for T=1 gives e^{-1}
    x = integrate(lambda x: -x, [1.0], 1.0)
    assert x[0] == pytest.approx(np.exp(-1.0), abs=1e-6)


def test_stationary_field_identity():
    x = integrate(lambda x: np.zeros_like(x), [3.0, -2.0], 7.5)
    assert np.array_equal(x, [3.0, -2.0])


def test_harmonic_oscillator_full_period():
    f = lambda x: np.array([x[1], -x[0]])
    x = integrate(f, [1.0, 0.0], 2 * np.pi)
    assert np.allclose(x, [1.0, 0.0], atol=1e-5)


def test_backward_inverts_exponential():
    x = flow_backward(lambda x: -x, [np.exp(-1.0)], 1.0)
    assert x[0] == pytest.approx(1.0, abs=1e-6)


def test_backward_of_stationary_is_identity():
    x = flow_backward(lambda x: np.zeros_like(x), [0.4], 2.0)
    assert x[0] == 0.4


def test_forward_backward_roundtrip(rng):
    A = np.array([[0.0, 1.0], [-2.0, -0.3]])
    f = lambda x: A @ x
    for _ in range(20):
        x0 = rng.uniform(-1, 1, size=2)
        y = flow_backward(f, x0, 1.5)
        back = integrate(f, y, 1.5)
        assert np.allclose(back, x0, atol=1e-5)


def test_flow_semigroup_property(rng):
    f = lambda x: np.array([x[1], -np.sin(x[0])])
    for _ in range(10):
        x0 = rng.uniform(-1, 1, size=2)
        one = integrate(f, x0, 0.9)
        two = integrate(f, integrate(f, x0, 0.4), 0.5)
        assert np.allclose(one, two, atol=1e-7)


def test_tolerance_halving_reduces_error():
    errs = []
    for rt in (1e-4, 1e-6, 1e-8):
        cfg = IntegratorConfig(rel_tol=rt, abs_tol=rt * 1e-2, max_step=0.5)
        x = integrate(lambda x: -x, [1.0], 2.0, cfg)
        errs.append(abs(x[0] - np.exp(-2.0)))
    assert errs[2] <= errs[1] <= errs[0]


def test_step_underflow_raises_with_time():
    # a field that blows up in finite time near t=1
    f = lambda x: x ** 2
    with pytest.raises(IntegrationError) as err:
        integrate(f, [1.0], 2.0, IntegratorConfig(min_step=1e-10))
    assert err.value.t > 0.5


def test_trajectory_validation_and_csv(tmp_path):
    t = np.array([0.0, 0.1, 0.2])
    x = np.zeros((3, 2))
    u = np.ones((3, 1))
    d = np.zeros((3, 0))
    c = np.zeros(3)
    traj = Trajectory(t=t, x=x, u=u, d=d, cost=c)
    traj.to_csv(tmp_path / "traj.csv")
    lines = (tmp_path / "traj.csv").read_text().splitlines()
    assert lines[0] == "t,x_1,x_2,u_1,cost"
    assert len(lines) == 4
    with pytest.raises(ValueError):
        Trajectory(t=t[::-1].copy(), x=x, u=u, d=d, cost=c)


def test_observer_sees_endpoints():
    seen = []
    integrate(lambda x: -x, [1.0], 0.5, observer=lambda t, x: seen.append(t))
    assert seen[0] == 0.0
    assert seen[-1] == pytest.approx(0.5)
