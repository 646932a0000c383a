import numpy as np
import pytest

from vfc import fixtures
from vfc.charts import manifold_chart
from vfc.errors import VFCError
from vfc.kcat import (AffineBaseMap, FiniteGroup, GroupElement, KChart, build_kuranishi, choose_cutoffs,
                      choose_metric, constant_metric, hol_sample, identity_transition, is_complete,
                      metric_condition_holds, pullback_kuranishi, weak_product)
from vfc.regions import Region

BOXES = (Region.box([-3, -3], [3, 3]), Region.box([-2.5, -2.5], [2.5, 2.5]), Region.box([-2, -2], [2, 2]))


def col(f):
    return lambda X, v=(): f(np.atleast_2d(X)[:, 0] + 1j * np.atleast_2d(X)[:, 1])[:, None]


def chart(cid, dbar, group=None, boxes=BOXES):
    sharp, prime, core = boxes
    return KChart(cid, manifold_chart(sharp), core, prime, 1, col(dbar), group)


def test_cyclic_group_is_closed():
    G = FiniteGroup.cyclic_rotation(3, 2, 1, vchar=1)
    assert G.order == 3
    # the multiplication table is a Latin square
    for row in G.table:
        assert sorted(row) == [0, 1, 2]
    g = G.elements[1]
    np.testing.assert_allclose(g.matrix @ g.matrix @ g.matrix, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(g.vrep ** 3, [[1]], atol=1e-12)


def test_irrational_rotation_never_closes():
    a = 1.0
    R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    with pytest.raises(VFCError) as err:
        FiniteGroup.generated([GroupElement(R, np.zeros(2), np.eye(1, dtype=complex))], 2, 1)
    assert err.value.code == "GROUP_NOT_CLOSED"


def test_duplicate_chart_ids():
    with pytest.raises(VFCError) as err:
        build_kuranishi([chart("a", lambda z: z), chart("a", lambda z: z)], [])
    assert err.value.code == "SCHEMA"


def test_transition_to_unknown_chart():
    t = identity_transition("a", "b", Region.box([-1, -1], [1, 1]), 2)
    with pytest.raises(VFCError) as err:
        build_kuranishi([chart("a", lambda z: z)], [t])
    assert err.value.code == "NOT_LOCALLY_FINITE"


def test_regions_must_nest():
    bad = (BOXES[0], BOXES[2], BOXES[1])  # F bigger than F'
    with pytest.raises(VFCError) as err:
        build_kuranishi([chart("a", lambda z: z, boxes=bad)], [])
    assert err.value.code == "BAD_NESTING"


def test_dbar_must_be_equivariant():
    # z -> -z with trivial action on V: dbar = z is odd, so not equivariant
    G = FiniteGroup.cyclic_rotation(2, 2, 1)
    with pytest.raises(VFCError) as err:
        build_kuranishi([chart("a", lambda z: z, G)], [])
    assert err.value.code == "AXIOM_VIOLATION"
    # twisting V by the same character fixes it
    build_kuranishi([chart("a", lambda z: z, FiniteGroup.cyclic_rotation(2, 2, 1, vchar=1))], [])


def test_dbar_must_be_coherent():
    t = identity_transition("a", "b", Region.box([-1, -1], [1, 1]), 2)
    with pytest.raises(VFCError) as err:
        build_kuranishi([chart("a", lambda z: z), chart("b", lambda z: z + 0.1)], [t])
    assert err.value.code == "AXIOM_VIOLATION"


def test_orientation_reversing_element_rejected():
    flip = GroupElement(np.diag([1.0, -1.0]), np.zeros(2), np.eye(1, dtype=complex))
    G = FiniteGroup([GroupElement(np.eye(2), np.zeros(2), np.eye(1, dtype=complex)), flip])
    with pytest.raises(VFCError) as err:
        build_kuranishi([chart("a", lambda z: z * np.conj(z), G)], [])
    assert err.value.code == "GROUP_NOT_CLOSED"


def test_transport_through_orbifold_transition():
    K = fixtures.get("three_chart").K
    # images w = -1 + y^2 = -0.36 and -1 + 0.5i lie in the plane chart, away from its hole at -1
    Y = np.array([[0.8, 0.0], [0.5, 0.5]])
    # transport(src, dst, Y) gives the src points matching the dst points Y
    X, mask = K.transport("plane", "z2", Y)
    assert mask.all()
    y = Y[:, 0] + 1j * Y[:, 1]
    np.testing.assert_allclose(X[:, 0] + 1j * X[:, 1], -1 + y ** 2, atol=1e-12)
    back, ok = K.transport("z2", "plane", X)
    assert ok.all()
    # the principal root returns y up to the group action
    b = back[:, 0] + 1j * back[:, 1]
    assert np.all(np.minimum(abs(b - y), abs(b + y)) < 1e-12)


def test_holomorphic_points():
    hol = hol_sample(fixtures.get("three_chart").K)
    assert np.allclose(hol["plane"][()], 0.0, atol=1e-9)
    assert len(hol["z2"][()]) == 0 and len(hol["z3"][()]) == 0
    seg = hol_sample(fixtures.get("segment").K)["segment"]
    # c = 1 at vertex 0; c = +-2 at vertex 1
    v0, v1 = sorted(seg)
    np.testing.assert_allclose(seg[v0], [[0.0, 0.0]], atol=1e-9)
    c = np.exp(seg[v1][:, 0] + 1j * seg[v1][:, 1])
    np.testing.assert_allclose(sorted(c.real), [-2.0, 2.0], atol=1e-9)


def test_completeness():
    ok, diag = is_complete(fixtures.get("ray").K)
    assert ok and diag["tropical_parts_complete"]
    ok, diag = is_complete(fixtures.get("open_ray").K)
    assert not ok and not diag["tropical_parts_complete"]


def test_escaping_zero_is_not_proper():
    # dbar = z - 2.9 vanishes next to the edge of F-sharp
    K = build_kuranishi([chart("a", lambda z: z - 2.9)], [])
    ok, diag = is_complete(K)
    assert not ok and diag["escapes"] > 0


@pytest.mark.parametrize("name", ["z", "two_chart", "three_chart", "segment"])
def test_cutoffs_cover_holomorphic_points(name):
    K = fixtures.get(name).K
    cut = choose_cutoffs(K)
    for cid, per in hol_sample(K).items():
        for v, X in per.items():
            inside = K[cid].F.contains(K[cid].box(X)) if len(X) else []
            if len(X) and np.any(inside):
                assert np.all(cut.max_rho(cid, X[inside], v) > 0.5)
    met = choose_metric(K, cut)
    assert metric_condition_holds(K, cut, met)


def test_small_metric_violates_condition():
    K = fixtures.get("z").K
    cut = choose_cutoffs(K)
    # with |v| tiny, |dbar| < 1 everywhere, including far from the cutoff support
    assert not metric_condition_holds(K, cut, constant_metric(K, 1e-3))


def test_weak_product_shape():
    P = weak_product([fixtures.get("z").K, fixtures.get("z2").K])
    (cid,) = P.order
    c = P[cid]
    assert (c.dim, c.rank) == (4, 2)
    X = np.random.default_rng(1).normal(size=(10, 4))
    z1, z2 = X[:, 0] + 1j * X[:, 1], X[:, 2] + 1j * X[:, 3]
    np.testing.assert_allclose(c.dbar_values(X), np.stack([z1, z2 ** 2], axis=1))


def test_pullback_base_map():
    base = fixtures.get("z").K
    y = AffineBaseMap(np.array([[2.0]]), np.array([0.5]), Region.box([-3], [3]))
    K = pullback_kuranishi(base, y)
    c = K[K.order[0]]
    X = np.array([[0.5, 0.0], [1.0, 1.0]])
    # the composite to Z is the old evaluation
    np.testing.assert_allclose(y(c.base_map(X))[:, 0], X[:, 0])
