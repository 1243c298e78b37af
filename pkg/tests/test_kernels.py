"""Backend parity: the numba kernels and their numpy twins agree."""

import numpy as np
import pytest

from densyn import kernels_numba as knb
from densyn import kernels_numpy as knp
from densyn.field import build_grid


def _grid_arrays(g):
    return (np.ascontiguousarray(g.lo), np.ascontiguousarray(g.spacing),
            np.ascontiguousarray(g.count), np.ascontiguousarray(g.strides))


@pytest.mark.parametrize("axes", [
    [(0.0, 1.0, 7)],
    [(0.0, 2.0, 5), (-1.0, 1.0, 9)],
    [(0.0, 30.0, 6), (0.0, 30.0, 7), (0.0, 80.0, 8)],
    [(0.0, 1.0, 3)] * 4,  # generic-dimension path
])
def test_interp_many_parity(axes, rng):
    g = build_grid(axes)
    vals = rng.normal(size=g.num_nodes)
    pts = rng.uniform(g.lo - 0.3, g.hi + 0.3, size=(300, g.ndim))
    lo, h, c, s = _grid_arrays(g)
    a = knb.interp_many(vals, pts, lo, h, c, s)
    b = knp.interp_many(vals, pts, lo, h, c, s)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("maximize,group", [(False, 1), (True, 1), (False, 2)])
def test_sl_sweep_parity(maximize, group, rng):
    g = build_grid([(0.0, 1.0, 6), (0.0, 1.0, 5)])
    N = g.num_nodes
    S = 4 * group
    vals = rng.normal(size=N)
    adv = rng.uniform(0, 1, size=(S, N, 2))
    cost = rng.uniform(0, 2, size=(S, N))
    uv = np.repeat(rng.uniform(-1, 1, size=(S // group, 1, N)), group, axis=1).reshape(S, N)
    lo, h, c, s = _grid_arrays(g)
    va, ja = knb.sl_sweep(vals, lo, h, c, s, adv, cost, uv, 0.97, 0.03, maximize, group)
    vb, jb = knp.sl_sweep(vals, lo, h, c, s, adv, cost, uv, 0.97, 0.03, maximize, group)
    assert np.allclose(va, vb, rtol=1e-13, atol=1e-13)
    assert np.array_equal(ja, jb)


def test_density_backward_parity(rng):
    from densyn.density import DensityConfig, SourceSpec, stationary_density
    from densyn.field import Box
    from densyn.system import closed_loop_field, policy_from_callable, toy_system
    import densyn.backend as backend

    sys = toy_system(u_max=2.0, box=(-2.0, 2.0))
    grid = build_grid([(-2.0, 2.0, 41)])
    pol = policy_from_callable(grid, lambda x: -x, sys.u_lo, sys.u_hi)
    clf = closed_loop_field(sys, pol)
    src = SourceSpec(box=Box([-1.0], [1.0]), amplitude=1.0)
    cfg = DensityConfig(dt=5e-3)
    results = {}
    for name in ("numba", "numpy"):
        import os
        os.environ["DENSYN_BACKEND"] = name
        try:
            results[name] = stationary_density(clf, src, 2.0, grid, cfg).field.values
        finally:
            os.environ.pop("DENSYN_BACKEND", None)
    assert np.allclose(results["numba"], results["numpy"], rtol=1e-10, atol=1e-12)


def test_splat_forward_parity(rng):
    g = build_grid([(-2.0, 2.0, 31)])
    lo, h, c, s = _grid_arrays(g)
    u_tab = np.ascontiguousarray(-g.nodes().T)  # policy u = -x
    parts = rng.uniform(-1, 1, size=(50, 1))
    w = rng.uniform(0.1, 1.0, size=50)
    args = (parts, w, knp.SYS_TOY, u_tab, np.array([-2.0]), np.array([2.0]),
            0, np.zeros(0), np.zeros((0, g.num_nodes)), np.zeros(0), np.zeros(0),
            np.array([-2.0]), np.array([2.0]), lo, h, c, s, 1.0, 0.01, 5.0)
    a = knb.splat_forward(*args)
    b = knp.splat_forward(*args)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_backend_env_flag(monkeypatch):
    import densyn.backend as backend

    monkeypatch.setenv("DENSYN_BACKEND", "numpy")
    assert backend.backend_name() == "numpy"
    assert backend.get_kernels() is knp
    monkeypatch.setenv("DENSYN_BACKEND", "numba")
    assert backend.backend_name() == "numba"
    assert backend.get_kernels() is knb
    monkeypatch.setenv("DENSYN_BACKEND", "bogus")
    with pytest.raises(ValueError):
        backend.backend_name()
