from fractions import Fraction

import numpy as np
import pytest

from vfc import fixtures
from vfc.branched import (ChartOpen, default_cover, discrete, has_trivial_stabilizers, indiscrete, neighborhood,
                          per_chart_cover, product_cover)
from vfc.errors import VFCError
from vfc.regions import Region


@pytest.fixture(scope="module")
def orbifold():
    return fixtures.get("z2_orbifold").K


@pytest.fixture(scope="module")
def three():
    return fixtures.get("three_chart").K


def ball(chart, center, r):
    return ChartOpen(chart, Region.ball(center, r))


def test_measure_is_a_probability(orbifold):
    cover = per_chart_cover(orbifold, "disk")
    for O in (ball("disk", [0.3, 0.1], 0.2), ball("disk", [0.0, 0.0], 0.5), ball("disk", [1.9, 1.9], 0.4)):
        sp = cover.space(O)
        assert all(isinstance(m, Fraction) for m in sp.measure.values())
        assert sp.total == 1
        assert cover.check_measure(O)


def test_branches_separate_inside_and_glue_across_the_edge(orbifold):
    cover = per_chart_cover(orbifold, "disk", Region.box([-1, -1], [1, 1]))
    inside = cover.space(ball("disk", [0.2, 0.2], 0.3))
    assert inside.separated(0, 1)
    straddle = cover.space(ball("disk", [1.0, 0.0], 0.3))
    assert not straddle.separated(0, 1)
    assert straddle.measure == {0: Fraction(1, 2), 1: Fraction(1, 2)}
    outside = cover.space(ball("disk", [2.0, 2.0], 0.2))
    assert outside.branches == ("*",) and outside.total == 1


def test_pullback_preserves_measure_exactly(orbifold):
    cover = per_chart_cover(orbifold, "disk", Region.box([-1, -1], [1, 1]))
    big = ball("disk", [0.1, 0.0], 0.5)
    small = ball("disk", [0.2, 0.1], 0.1)
    assert cover.check_pullback(small, big)
    # the nontrivial automorphism permutes branches and keeps every preimage sum
    assert cover.check_pullback(big, big, 1)
    pb = cover.pullback(big, big, 1)
    assert sorted(pb.values()) == [0, 1] and pb[0] != 0
    # restriction to an open off U' collapses to one branch of measure 1 = 1/2 + 1/2
    far = ball("disk", [1.8, 1.8], 0.1)
    wide = ball("disk", [1.2, 1.2], 1.0)
    assert cover.check_pullback(far, wide)


def test_product_measure(three):
    cover = default_cover(three)
    assert [c.chart for c in cover.covers] == ["z2", "z3"]
    O = ball("z2", [0.0, 0.0], 0.3)
    sp = cover.space(O)
    # Z/2 branches in the z2 chart times the single branch of the Z/3 cover (not over z3 here)
    assert len(sp.branches) == 2
    assert sp.total == 1
    a, b = per_chart_cover(three, "z2"), per_chart_cover(three, "z3")
    prod = product_cover([a, b])
    Oz3 = ball("z3", [0.0, 0.0], 0.3)
    spz3 = prod.space(Oz3)
    for br, m in spz3.measure.items():
        assert m == a.space(Oz3).measure[br[0]] * b.space(Oz3).measure[br[1]]
    assert spz3.total == 1
    assert prod.check_pullback(Oz3, Oz3, 1)


def test_product_of_two_orbifold_covers_is_exact():
    # two independent Z/2 covers on the same chart: four branches of measure 1/4
    K = fixtures.get("z2_orbifold").K
    a = per_chart_cover(K, "disk")
    prod = product_cover([a, per_chart_cover(K, "disk", Region.ball([0.0, 0.0], 1.0))])
    sp = prod.space(ball("disk", [0.1, 0.0], 0.2))
    assert len(sp.branches) == 4
    assert set(sp.measure.values()) == {Fraction(1, 4)}
    assert sp.total == 1


def test_bad_measures_rejected():
    with pytest.raises(VFCError):
        discrete((0, 1), {0: Fraction(1, 2), 1: 0.5})
    with pytest.raises(VFCError):
        indiscrete((0, 1), {0: Fraction(1), 1: Fraction(0)})


def test_cover_must_stay_inside_U(orbifold):
    with pytest.raises(VFCError) as err:
        per_chart_cover(orbifold, "disk", Region.box([-2.9, -2.9], [2.9, 2.9]))
    assert err.value.code == "BAD_NESTING"


def test_trivial_stabilizers(orbifold):
    cover = per_chart_cover(orbifold, "disk")
    assert has_trivial_stabilizers(orbifold, cover, [("disk", np.zeros(2), 1)])
    O = neighborhood(orbifold, "disk", np.array([0.5, 0.5]), cover)
    assert cover.space(O).separated(0, 1)


def test_virtual_class_weights_are_exact():
    from shared import context
    vc = context("z2_orbifold").vclass()
    weights = [mu for _, _, _, mu, _ in vc.pieces]
    assert all(isinstance(m, Fraction) for m in weights)
    assert sum(weights) == 1
    assert vc.signed_count() == 1
