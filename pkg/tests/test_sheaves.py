import time

import numpy as np
import pytest

from vfc import fixtures
from vfc.errors import VFCError
from vfc.regions import Region
from vfc.sheaves import (FunctionSheaf, MetricSheaf, PerturbationSheaf, ShrinkSchedule, extend_function,
                         global_section, vanishing_function)

# seed on a strip of the plane chart well inside its upper box
K1 = {"plane": Region.box([-2.2, 1.0], [2.2, 2.2])}
K1_SHARP = {"plane": Region.box([-2.4, 0.8], [2.4, 2.4])}
ORDERS = {"z2": (2, -1.0), "z3": (3, 1.0)}


def seed_function(X, v=()):
    X = np.atleast_2d(X)
    return X[:, 0] ** 2 + np.sin(X[:, 1])


def seed_metric(X, v=()):
    X = np.atleast_2d(X)
    return (1.0 + 0.1 * X[:, 0] ** 2 + 0.05 * X[:, 1])[:, None, None].astype(complex)


def orbifold_pairs(cid, rng, count=4000):
    """Points y of an orbifold disk with F-membership, and their images w = center + y^k in the plane."""
    order, center = ORDERS[cid]
    r = 0.85 * np.sqrt(rng.uniform(0, 1, count))
    a = rng.uniform(0, 2 * np.pi, count)
    y = r * np.exp(1j * a)
    w = center + y ** order
    return np.stack([y.real, y.imag], axis=1), np.stack([w.real, w.imag], axis=1)


def plane_F(W):
    """Membership in F of the plane chart, written out box by box."""
    boxes = [((-2.7, 0.5), (2.7, 2.7)), ((-2.7, -2.7), (2.7, -0.5)), ((-2.7, -2.7), (-1.5, 2.7)),
             ((-0.5, -2.7), (0.5, 2.7)), ((1.5, -2.7), (2.7, 2.7))]
    inside = np.zeros(len(W), dtype=bool)
    for lo, hi in boxes:
        inside |= np.all((W > lo) & (W < hi), axis=1)
    return inside


@pytest.fixture(scope="module")
def three():
    return fixtures.get("three_chart").K


@pytest.mark.parametrize("sheaf,seed", [(FunctionSheaf(), seed_function), (MetricSheaf(), seed_metric)],
                         ids=["functions", "metrics"])
def test_three_chart_global_section(three, sheaf, seed):
    t0 = time.perf_counter()
    gs = global_section(three, sheaf, seed={"plane": seed}, K1=K1, K1_sharp=K1_SHARP, seed_value=3)
    rng = np.random.default_rng(7)
    # restriction to K1 is the seed, bit for bit
    P = rng.uniform([-2.2, 1.0], [2.2, 2.2], size=(2000, 2))
    assert np.array_equal(gs("plane", P), seed(P))
    # compatibility across both orbifold transitions, with the maps written out here
    compared = 0
    for cid in ("z2", "z3"):
        Y, W = orbifold_pairs(cid, rng)
        keep = plane_F(W)
        assert keep.sum() > 100
        a, b = gs(cid, Y[keep]), gs("plane", W[keep])
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)
        compared += keep.sum()
        # invariance under the rotation group of the disk
        order = ORDERS[cid][0]
        rot = np.exp(2j * np.pi / order)
        y = Y[:, 0] + 1j * Y[:, 1]
        gy = y * rot
        np.testing.assert_allclose(gs(cid, np.stack([gy.real, gy.imag], 1)), gs(cid, Y), rtol=1e-9, atol=1e-9)
    assert compared > 500
    assert gs.max_incompatibility() <= 1e-9
    assert time.perf_counter() - t0 < 30


def test_schedule_nests(three):
    sched = ShrinkSchedule(three)
    assert sched.check()
    for cid, lv in sched.levels.items():
        assert all(a < b for a, b in zip(lv, lv[1:]))


def test_seed_must_sit_inside_its_sharp_region(three):
    with pytest.raises(VFCError) as err:
        global_section(three, FunctionSheaf(), seed={"plane": seed_function}, K1=K1,
                       K1_sharp={"plane": Region.box([-2.2, 1.0], [2.2, 2.2])})
    assert err.value.code == "AXIOM_VIOLATION"


def test_extend_function_keeps_values_and_support():
    fx = fixtures.get("two_chart")
    K = fx.K
    rho = lambda X, v=(): np.exp(-np.sum(np.atleast_2d(X) ** 2, axis=1))
    support = {"left": K["left"].F_sharp, "right": K["right"].F_sharp}
    out = extend_function(K, "left", rho, support)
    P = np.random.default_rng(0).uniform([-2, -2], [0.4, 2], size=(500, 2))
    assert np.array_equal(out("left", P), rho(P))
    # on the overlap the right chart sees the same function
    Q = np.random.default_rng(1).uniform([-0.4, -2], [0.4, 2], size=(300, 2))
    np.testing.assert_allclose(out("right", Q), rho(Q), atol=1e-12)


def test_extend_function_support_escape():
    K = fixtures.get("two_chart").K
    rho = lambda X, v=(): np.ones(len(np.atleast_2d(X)))
    tiny = {"left": Region.box([-3, -3], [1, 3]), "right": Region.box([0.9, -0.1], [1.0, 0.1])}
    with pytest.raises(VFCError) as err:
        extend_function(K, "left", rho, tiny)
    assert err.value.code == "SUPPORT_ESCAPE"


def test_vanishing_function():
    K = fixtures.get("z").K
    f = vanishing_function(K, {"disk": Region.ball([0.0, 0.0], 1.0)})["disk"]
    X = np.array([[0.0, 0.0], [0.5, 0.5], [1.5, 0.0], [0.0, -2.0]])
    vals = f(X)
    assert vals[0] == 0 and vals[1] == 0
    np.testing.assert_allclose(vals[2:], [0.25, 1.0])


def test_perturbation_is_small_and_equivariant():
    fx = fixtures.get("z2_orbifold")
    K = fx.K
    S = PerturbationSheaf(0.1)
    nu = S.average(K, "disk", S.local_section(K, "disk", np.random.default_rng(0)))
    X = np.random.default_rng(1).uniform(-2.5, 2.5, size=(400, 2))
    diff = nu(X) - K["disk"].dbar_values(X)
    # bump coefficients have norm at most 1, 1/2, 1/3
    assert np.max(np.abs(diff)) <= 0.1 * (1 + 1 / 2 + 1 / 3) + 1e-12
    g = K["disk"].group.elements[1]
    np.testing.assert_allclose(nu(g.act(X)), g.act_v(nu(X)), atol=1e-12)

