import math
from fractions import Fraction as F

import numpy as np
import pytest

from oracles import tensor_gauss
from vfc.charts import (
    ExplodedChart, check_form_flags, complete_form, integrate_chart, manifold_chart,
    tropical_complete_chart,
)
from vfc.errors import VFCError
from vfc.forms import Form, constant_form, coordinate_form, d, function_form, pullback, top_form, wedge
from vfc.quadrature import integrate_box
from vfc.regions import Region, smooth_step
from vfc.tropical import full_space, polytope_from_constraints

UNIT = polytope_from_constraints([([1], 0), ([-1], -1)])
RAY = polytope_from_constraints([([1], 0)])


def bump(r2):
    out = np.zeros_like(r2)
    inside = r2 < 1
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def test_strata_examples():
    reg = Region.box([-1, -3], [1, 3])
    assert ExplodedChart(1, 1, UNIT, reg).strata() == [(F(0),), (F(1),)]
    assert ExplodedChart(1, 1, RAY, reg).strata() == [(F(0),)]
    assert ExplodedChart(1, 1, full_space(1), reg).strata() == []
    assert manifold_chart(Region.box([0], [1])).strata() == [()]


def test_form_algebra_examples():
    dx, dy = coordinate_form(2, [0]), coordinate_form(2, [1])
    X = np.array([[0.3, -0.2]])
    e = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert wedge(dx, dy)(X, e)[0] == 1.0
    assert wedge(dy, dx)(X, e)[0] == -1.0
    assert np.allclose(d(constant_form(2)).coeffs(X), 0.0)
    with pytest.raises(VFCError) as err:
        wedge(wedge(dx, dy), dx)
    assert err.value.code == "DEGREE_OVERFLOW"


def test_d_squared_vanishes_numerically():
    f = function_form(3, lambda X, v: np.sin(X[:, 0]) * np.exp(X[:, 1]) + X[:, 2] ** 3 * X[:, 0])
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, size=(50, 3))
    assert np.max(np.abs(d(d(f)).coeffs(X))) < 1e-6
    # and d f matches the gradient
    g = d(f).coeffs(X)
    exact = np.stack([np.cos(X[:, 0]) * np.exp(X[:, 1]) + X[:, 2] ** 3,
                      np.sin(X[:, 0]) * np.exp(X[:, 1]), 3 * X[:, 2] ** 2 * X[:, 0]], axis=1)
    assert np.max(np.abs(g - exact)) < 1e-8


def test_pullback_of_area_form_is_jacobian():
    area = wedge(coordinate_form(2, [0]), coordinate_form(2, [1]))
    polar = lambda Y, v: np.stack([Y[:, 0] * np.cos(Y[:, 1]), Y[:, 0] * np.sin(Y[:, 1])], axis=1)
    pb = pullback(area, polar, None, 2)
    Y = np.array([[2.0, 0.7], [0.5, 3.0]])
    assert np.allclose(pb.coeffs(Y)[:, 0], Y[:, 0], atol=1e-8)


def test_quadrature_matches_plain_gauss():
    f = lambda X: np.exp(-X[:, 0] ** 2 - 2 * X[:, 1] ** 2) * np.cos(X[:, 0] * X[:, 1])
    val, err = integrate_box(f, [-3, -3], [3, 3])
    assert abs(val - tensor_gauss(f, [-3, -3], [3, 3])) < 1e-9


def test_point_chart_integrates_value():
    chart = manifold_chart(Region.point())
    assert integrate_chart(chart, constant_form(0, 2.5)) == 2.5


def _unit_bump_top_form(n, m):
    """Bump in (u, s) times 1/(2 pi)^m in the angles, normalized by an independent quadrature."""
    def density(X, v=()):
        idx = list(range(n)) + [n + 2 * j for j in range(m)]
        return bump((X[:, idx] ** 2).sum(axis=1) / 0.81)
    mass = tensor_gauss(lambda Y: bump((Y ** 2).sum(axis=1) / 0.81), [-0.9] * (n + m), [0.9] * (n + m))
    mass *= (2 * math.pi) ** m
    return top_form(n + 2 * m, lambda X, v: density(X) / mass)


def test_two_vertex_chart_doubles_symmetric_bump():
    reg = Region.box([-1, -1], [1, 1])
    theta = _unit_bump_top_form(1, 1)
    two = integrate_chart(ExplodedChart(1, 1, UNIT, reg), theta)
    one = integrate_chart(ExplodedChart(1, 1, RAY, reg), theta)
    assert abs(one - 1.0) < 1e-7
    assert abs(two - 2.0 * one) < 1e-8


def test_integration_rejects_forms_outside_omega():
    reg = Region.box([-1, -1], [1, 1])
    theta = _unit_bump_top_form(1, 1)
    bad = Form(3, 3, theta._coeffs, in_omega=False)
    with pytest.raises(VFCError) as err:
        integrate_chart(ExplodedChart(1, 1, UNIT, reg), bad)
    assert err.value.code == "REJECTED"


def test_integration_is_linear_and_additive():
    chart = manifold_chart(Region.box([-2, -2], [2, 2]))
    b1 = top_form(2, lambda X, v: bump(((X - [-1, 0]) ** 2).sum(axis=1) / 0.5))
    b2 = top_form(2, lambda X, v: bump(((X - [1, 0.5]) ** 2).sum(axis=1) / 0.5) * X[:, 0])
    i1, i2 = integrate_chart(chart, b1), integrate_chart(chart, b2)
    assert abs(integrate_chart(chart, b1 + b2.scaled(3.0)) - (i1 + 3 * i2)) < 1e-8


def test_chart_completion_examples():
    reg = Region.box([-1, -1], [1, 1])
    open_ray = polytope_from_constraints([([1], 0, True)])
    c = tropical_complete_chart(ExplodedChart(1, 1, open_ray, reg), [1])
    assert c.polytope == full_space(1)
    c = tropical_complete_chart(ExplodedChart(1, 1, UNIT, reg), [0])
    assert c.polytope == RAY
    man = manifold_chart(reg)
    assert tropical_complete_chart(man, []) == ExplodedChart(2, 0, full_space(0), reg, 1, "//()")
    one = constant_form(2)
    assert complete_form(one).coeffs(np.zeros((1, 2)))[0, 0] == 1.0


def test_integration_commutes_with_completion():
    reg = Region.box([-1, -1], [1, 1])
    chart = ExplodedChart(1, 1, UNIT, reg)
    theta = _unit_bump_top_form(1, 1)
    theta = theta.times_function(lambda X, v: 1.0 + float(v[0]) + 0.3 * X[:, 0])
    per_vertex = 0.0
    for v in chart.strata():
        per_vertex += integrate_chart(tropical_complete_chart(chart, v), complete_form(theta, v))
    assert abs(per_vertex - integrate_chart(chart, theta)) < 1e-7


def test_form_flag_checks():
    chart = ExplodedChart(1, 1, RAY, Region.box([-1, -1], [1, 1]))
    ds = coordinate_form(3, [1])
    check_form_flags(ds, chart)
    dt = coordinate_form(3, [2])
    with pytest.raises(VFCError):
        check_form_flags(dt, chart)


def test_soft_indicator_is_exact_at_depth():
    reg = Region.box([0, 0], [1, 1])
    Y = np.array([[0.5, 0.5], [0.05, 0.5], [-0.1, 0.5]])
    vals = reg.soft_indicator(Y, 0.1)
    assert vals[0] == 1.0 and 0 < vals[1] < 1 and vals[2] == 0.0
    assert smooth_step(np.array([0.5]))[0] == pytest.approx(0.5)
