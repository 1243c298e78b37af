import json

import numpy as np
import pytest

from densyn.field import (Box, EmptyRegion, GridError, GridField, HalfSpace,
                          box_quadrature_weights, build_grid,
                          field_from_function, indicator_field, inner_product,
                          interpolate, interpolate_many, load_field,
                          save_field, sup_norm_on, trapezoid_weights)


def test_build_grid_two_point_axis():
    g = build_grid([(0.0, 1.0, 2)])
    assert np.allclose(g.axis_coords(0), [0.0, 1.0])


def test_build_grid_integer_spacing():
    g = build_grid([(0.0, 10.0, 11)])
    assert g.spacing[0] == 1.0


def test_build_grid_node_count_product():
    g = build_grid([(0, 30, 31), (0, 30, 31), (0, 100, 51)])
    assert g.num_nodes == 31 * 31 * 51 == 49011


@pytest.mark.parametrize("axes", [
    [(1.0, 0.0, 5)],            # lo >= hi
    [(0.0, 1.0, 1)],            # count < 2
    [(0.0, np.inf, 4)],         # non-finite
    [],
])
def test_build_grid_rejects_bad_axes(axes):
    with pytest.raises(GridError):
        build_grid(axes)


def test_interpolate_exact_at_every_node():
    g = build_grid([(-1.0, 2.0, 7), (0.0, 1.0, 4)])
    vals = np.arange(g.num_nodes, dtype=float) ** 1.3
    f = GridField(g, vals)
    got = interpolate_many(f, g.nodes())
    assert np.array_equal(got, vals)


def test_interpolate_midpoint_1d():
    g = build_grid([(0.0, 1.0, 2)])
    f = GridField(g, np.array([0.0, 2.0]))
    assert interpolate(f, [0.5]) == pytest.approx(1.0, abs=1e-15)


def test_interpolate_reproduces_affine(rng):
    g = build_grid([(0, 3, 7), (-2, 2, 9), (0, 1, 4)])
    coeff = np.array([2.0, -3.0, 0.7])
    f = field_from_function(g, lambda P: P @ coeff + 1.0)
    pts = rng.uniform(g.lo, g.hi, size=(100, 3))
    got = interpolate_many(f, pts)
    assert np.abs(got - (pts @ coeff + 1.0)).max() < 1e-10


def test_interpolate_clamps_outside_queries():
    g = build_grid([(0.0, 1.0, 3)])
    f = field_from_function(g, lambda P: P[:, 0])
    assert interpolate(f, [-5.0]) == 0.0
    assert interpolate(f, [7.0]) == 1.0


def test_interpolate_rejects_nonfinite():
    g = build_grid([(0.0, 1.0, 3)])
    f = field_from_function(g, lambda P: P[:, 0])
    with pytest.raises(ValueError):
        interpolate(f, [np.nan])


def test_inner_product_zero_function():
    g = build_grid([(0.0, 1.0, 11)])
    z = GridField(g, np.zeros(11))
    one = GridField(g, np.ones(11))
    assert inner_product(z, one) == 0.0


def test_inner_product_unit_measure():
    g = build_grid([(0.0, 1.0, 101)])
    one = GridField(g, np.ones(101))
    assert inner_product(one, one) == pytest.approx(1.0, abs=1e-12)


def test_inner_product_x_squared():
    # oracle: int_0^1 x^2 dx = 1/3
    g = build_grid([(0.0, 1.0, 1001)])
    fx = field_from_function(g, lambda P: P[:, 0])
    assert inner_product(fx, fx) == pytest.approx(1.0 / 3.0, abs=1e-5)


def test_inner_product_symmetric_bilinear(rng):
    g = build_grid([(0.0, 2.0, 17), (0.0, 1.0, 9)])
    a = GridField(g, rng.normal(size=g.num_nodes))
    b = GridField(g, rng.normal(size=g.num_nodes))
    c = GridField(g, rng.normal(size=g.num_nodes))
    assert inner_product(a, b) == pytest.approx(inner_product(b, a), rel=1e-12)
    lhs = inner_product(GridField(g, 2.5 * a.values + c.values), b)
    rhs = 2.5 * inner_product(a, b) + inner_product(c, b)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_inner_product_grid_mismatch():
    a = GridField(build_grid([(0, 1, 5)]), np.ones(5))
    b = GridField(build_grid([(0, 1, 6)]), np.ones(6))
    with pytest.raises(GridError):
        inner_product(a, b)


def test_indicator_volume_converges_under_refinement():
    box = Box([0.25, 0.25], [0.75, 0.5])
    exact = 0.5 * 0.25
    errs = []
    for n in (21, 41, 81):
        g = build_grid([(0.0, 1.0, n), (0.0, 1.0, n)])
        ind = indicator_field(g, box)
        one = GridField(g, np.ones(g.num_nodes))
        errs.append(abs(inner_product(ind, one) - exact))
    assert errs[1] <= 0.55 * errs[0] + 1e-12
    assert errs[2] <= 0.55 * errs[1] + 1e-12


def test_sup_norm_on_zero_field():
    g = build_grid([(0.0, 1.0, 11)])
    f = GridField(g, np.zeros(11))
    assert sup_norm_on(f, Box([0.0], [1.0])) == 0.0


def test_sup_norm_on_empty_region_warns():
    g = build_grid([(0.0, 1.0, 11)])
    f = GridField(g, np.ones(11))
    with pytest.warns(UserWarning, match="no grid nodes"):
        assert sup_norm_on(f, Box([5.0], [6.0])) == 0.0


def test_sup_norm_on_right_half():
    g = build_grid([(0.0, 1.0, 101)])
    f = field_from_function(g, lambda P: P[:, 0])
    assert sup_norm_on(f, Box([0.5], [1.0])) == 1.0


def test_halfspace_strictness():
    hs = HalfSpace([0.0, 1.0], 5.0, strict=True)
    assert hs.contains([0.0, 4.9])
    assert not hs.contains([0.0, 5.0])
    closed = HalfSpace([0.0, 1.0], 5.0)
    assert closed.contains([0.0, 5.0])


def test_empty_region():
    g = build_grid([(0, 1, 5)])
    assert not EmptyRegion().contains_many(g.nodes()).any()


def test_box_quadrature_matches_exact_integral():
    # oracle: integral of the interpolant of x over [a, b] in closed form
    g = build_grid([(0.0, 1.0, 101)])
    fx = field_from_function(g, lambda P: P[:, 0])
    w = box_quadrature_weights(g, [0.25], [0.5])
    assert np.sum(w * fx.values) == pytest.approx((0.5 ** 2 - 0.25 ** 2) / 2, abs=1e-12)
    # clipping to the grid box
    w_all = box_quadrature_weights(g, [-3.0], [3.0])
    assert np.sum(w_all * fx.values) == pytest.approx(0.5, abs=1e-12)


def test_trapezoid_weights_sum_to_volume():
    g = build_grid([(0.0, 2.0, 9), (1.0, 4.0, 7)])
    assert np.sum(trapezoid_weights(g)) == pytest.approx(2.0 * 3.0, rel=1e-12)


def test_field_serialization_roundtrip_binary(tmp_path, rng):
    g = build_grid([(0.0, 1.0, 13), (-1.0, 1.0, 5)])
    f = GridField(g, rng.normal(size=g.num_nodes), role="value")
    save_field(f, tmp_path / "field", mode="bin")
    back = load_field(tmp_path / "field")
    assert np.array_equal(back.values, f.values)  # bit-exact
    assert back.role == "value"
    assert back.grid.same_as(g)
    header = json.loads((tmp_path / "field.json").read_text())
    assert header["axes"][0]["count"] == 13


def test_field_serialization_csv_mode(tmp_path):
    g = build_grid([(0.0, 1.0, 4)])
    f = GridField(g, np.array([0.0, 0.1, -2.5, 3.0]), role="density")
    save_field(f, tmp_path / "rho", mode="csv")
    back = load_field(tmp_path / "rho")
    assert np.array_equal(back.values, f.values)


def test_field_rejects_wrong_length_and_nonfinite():
    g = build_grid([(0, 1, 5)])
    with pytest.raises(GridError):
        GridField(g, np.ones(4))
    with pytest.raises(GridError):
        GridField(g, np.array([1.0, np.inf, 0, 0, 0]))
