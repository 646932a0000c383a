import math

import numpy as np
import pytest

from oracles import tensor_gauss
from shared import context
from vfc.errors import VFCError
from vfc.forms import Form, constant_form, coordinate_form
from vfc.kcat import hol_sample
from vfc.suites import PARTITION_A, PARTITION_B, configs
from vfc.vint import PushforwardConfig, chern_form, integrate_vclass, pushforward, thom_mass


@pytest.mark.parametrize("which", [0, 1])
def test_thom_form_has_unit_mass(which):
    cfg = configs(1)[which]
    R = cfg.radius
    mass = tensor_gauss(cfg.thom_density, [-R, -R], [R, R], n=32, panels=8)
    assert abs(mass - 1.0) < 1e-10
    assert abs(thom_mass(cfg) - 1.0) < 1e-8


def test_two_block_thom_form():
    cfg = PushforwardConfig(2, (1, 1), radius=0.6, power=3)
    R = cfg.radius
    mass = tensor_gauss(cfg.thom_density, [-R] * 4, [R] * 4, n=12, panels=4)
    assert abs(mass - 1.0) < 1e-6


def test_marginal_matches_direct_line_integral():
    cfg = PushforwardConfig(1, radius=0.5, power=6)
    (a, Lb, Lp, N, C) = cfg._block_data()[0]
    # base points are taken orthogonal to the kernel, as L^+ produces them
    w0 = np.array([[0.1, -0.2]])
    w0 = w0 - (w0 @ N) @ N.T
    t = np.linspace(-1, 1, 20001)
    line = w0 + t[:, None] * N[:, 0]
    direct = np.trapezoid(cfg.thom_density(line), t)
    np.testing.assert_allclose(cfg.marginal([w0]), direct, rtol=1e-6)


def test_bad_config_rejected():
    with pytest.raises(VFCError) as err:
        PushforwardConfig(1, (1,), (np.zeros((1, 2)),))
    assert err.value.code == "NOT_SUBMERSION"
    with pytest.raises(VFCError):
        PushforwardConfig(1, radius=-1.0)


@pytest.mark.parametrize("name", ["z", "z2_orbifold", "three_chart"])
def test_fiber_sums_are_one_on_the_core(name):
    ctx = context(name)
    for levels in (PARTITION_A, PARTITION_B):
        r = ctx.partition(levels)
        for cid, per in hol_sample(ctx.K).items():
            for v, X in per.items():
                if len(X):
                    np.testing.assert_allclose(r.fiber_sum(cid, X, v), 1.0, atol=1e-12)


@pytest.mark.parametrize("name,value", [("z", 1.0), ("z2", 2.0), ("zbar", -1.0), ("z2_orbifold", 1.0),
                                        ("segment", 3.0), ("three_chart", 1.0)])
def test_integral_of_one(name, value):
    ctx = context(name)
    assert abs(integrate_vclass(ctx.vclass(), constant_form(ctx.chart_dim), ctx.partition()) - value) < 1e-8


@pytest.mark.parametrize("name", ["z", "z2", "zbar"])
def test_pushforward_of_one_integrates_to_the_count(name):
    ctx = context(name)
    vc = ctx.vclass()
    total = integrate_vclass(vc, constant_form(ctx.chart_dim), ctx.partition())
    for cfg in configs(1):
        push = pushforward(vc, ctx.pi, constant_form(ctx.chart_dim), cfg, ctx.partition())
        assert push.degree == 1
        mass = tensor_gauss(lambda Y: push.coeffs(Y)[:, 0], [-3.0], [3.0], n=32, panels=24)
        assert abs(mass - total) < 1e-6
        # supported within reach of the images of the zeros
        far = push.coeffs(np.array([[2.9], [-2.9]]))
        assert np.all(far == 0)


def test_pushforward_degree_out_of_range():
    ctx = context("z")
    with pytest.raises(VFCError) as err:
        pushforward(ctx.vclass(), ctx.pi, coordinate_form(2, (0,)), PushforwardConfig(1), ctx.partition())
    assert err.value.code == "DEGREE_MISMATCH"


def test_integrand_degree_must_match():
    ctx = context("z")
    with pytest.raises(VFCError) as err:
        integrate_vclass(ctx.vclass(), coordinate_form(2, (0,)), ctx.partition())
    assert err.value.code == "DEGREE_MISMATCH"


def test_forms_outside_omega_rejected_on_tropical_charts():
    ctx = context("segment")
    bad = Form(0, 2, lambda X, v: np.ones((len(X), 1)), in_omega=False)
    with pytest.raises(VFCError) as err:
        integrate_vclass(ctx.vclass(), bad, ctx.partition())
    assert err.value.code == "REJECTED"


def test_chern_form_of_a_constant_curvature_line_bundle():
    # A = (i B / 2)(x dy - y dx) has dA = i B dx^dy, so c1 = B / (2 pi) dx^dy
    B = 1.7

    def conn(X):
        X = np.atleast_2d(X)
        A = np.zeros((len(X), 2, 1, 1), dtype=complex)
        A[:, 0, 0, 0] = -0.5j * B * X[:, 1]
        A[:, 1, 0, 0] = 0.5j * B * X[:, 0]
        return A

    X = np.random.default_rng(0).normal(size=(10, 2))
    c1 = chern_form(conn, 2, 1, samples=X)
    np.testing.assert_allclose(c1.coeffs(X)[:, 0], B / (2 * math.pi), rtol=1e-8)
    # the total curvature over a disk of radius 2 is B * area / (2 pi)
    inside = lambda Y: (np.sum(Y ** 2, axis=1) < 4.0)
    flux = tensor_gauss(lambda Y: c1.coeffs(Y)[:, 0] * inside(Y), [-2, -2], [2, 2], n=16, panels=32)
    assert abs(flux - B * 4 * math.pi / (2 * math.pi)) < 1e-2


def test_non_unitary_connection_rejected():
    conn = lambda X: np.ones((len(np.atleast_2d(X)), 2, 1, 1), dtype=complex)
    with pytest.raises(VFCError) as err:
        chern_form(conn, 2, 1, samples=np.zeros((1, 2)))
    assert err.value.code == "NOT_UNITARY"
