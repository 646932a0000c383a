import random
from fractions import Fraction as F

import pytest

from oracles import direction_grid, ray_leaves_point
from vfc.errors import VFCError
from vfc.tropical import (
    IntegralAffineMap, TropicalPoint, active_face, full_space, is_complete,
    polytope_from_constraints, polytope_from_json, tropical_complete_map,
    tropical_complete_polytope,
)

UNIT = polytope_from_constraints([([1], 0), ([-1], -1)])
SQUARE = polytope_from_constraints([([1, 0], 0), ([-1, 0], -1), ([0, 1], 0), ([0, -1], -1)])


def test_construction_examples():
    ray = polytope_from_constraints([([1], 0)])
    assert ray.constraints == (((1,), F(0), False),)
    assert len(SQUARE.constraints) == 4
    with pytest.raises(VFCError) as err:
        polytope_from_constraints([([1], 0), ([-1], 1)])
    assert err.value.code == "INFEASIBLE"
    with pytest.raises(VFCError) as err:
        polytope_from_constraints([([1], 0), ([1, 0], 0)])
    assert err.value.code == "BAD_DIM"


def test_canonicalization_makes_equal_polytopes_equal():
    a = polytope_from_constraints([([2, 4], 2), ([0, 1], 0)])
    b = polytope_from_constraints([([0, 3], 0), ([1, 2], 1), ([1, 2], 1)])
    assert a == b
    assert a.constraints[1][0] == (1, 2)
    # strict dominates the non-strict duplicate
    c = polytope_from_constraints([([1], 0), ([1], 0, True)])
    assert c.constraints == (((1,), F(0), True),)


def test_active_face_examples():
    assert active_face(UNIT, [0]) == (UNIT.constraints.index(((1,), F(0), False)),)
    assert len(active_face(SQUARE, [0, 0])) == 2
    assert active_face(UNIT, [F(1, 2)]) == ()
    with pytest.raises(VFCError) as err:
        active_face(UNIT, [2])
    assert err.value.code == "NOT_MEMBER"


def test_completion_examples():
    assert tropical_complete_polytope(UNIT, [0]) == polytope_from_constraints([([1], 0)])
    assert tropical_complete_polytope(UNIT, [F(1, 2)]) == full_space(1)
    strip = polytope_from_constraints([([1, 0], 0), ([0, 1], 0), ([0, -1], -1)])
    quad = polytope_from_constraints([([1, 0], 0), ([0, 1], 0)])
    assert tropical_complete_polytope(strip, [0, 0]) == quad
    assert all(not s for _, _, s in tropical_complete_polytope(
        polytope_from_constraints([([1], 0, True), ([-1], -1)]), [1]).constraints)


def test_completion_matches_ray_oracle_on_examples():
    strip = polytope_from_constraints([([1, 0], 0), ([0, 1], 0), ([0, -1], -1)])
    cone = tropical_complete_polytope(strip, [0, 0])
    for d in direction_grid(2):
        assert cone.contains(d) == ray_leaves_point(strip.constraints, (F(0), F(0)), d)


def test_is_complete_examples():
    assert is_complete(polytope_from_constraints([([1], 0)]))
    assert not is_complete(polytope_from_constraints([([1], 0, True)]))
    assert is_complete(full_space(3))
    # a strict facet that the closure never reaches does not spoil completeness
    assert is_complete(polytope_from_constraints([([1], 0), ([1], -5, True)]))


def test_vertices():
    assert UNIT.vertices() == [(F(0),), (F(1),)]
    assert polytope_from_constraints([([1], 0)]).vertices() == [(F(0),)]
    assert full_space(1).vertices() == []
    assert full_space(0).vertices() == [()]
    assert polytope_from_constraints([([1], 0, True), ([-1], -1)]).vertices() == [(F(1),)]
    assert len(SQUARE.vertices()) == 4


def test_map_completion_examples():
    ident = IntegralAffineMap(((1,),), (0,))
    f, Pc, Qc = tropical_complete_map(ident, UNIT, [0], UNIT)
    assert Pc == Qc == polytope_from_constraints([([1], 0)])
    double = IntegralAffineMap(((2,),), (0,))
    target = polytope_from_constraints([([1], 0), ([-1], -2)])
    _, Pc, Qc = tropical_complete_map(double, UNIT, [0], target)
    assert Pc == Qc == polytope_from_constraints([([1], 0)])
    diag = IntegralAffineMap(((1,), (1,)), (0, 0))
    _, Pc, Qc = tropical_complete_map(diag, UNIT, [F(1, 2)], SQUARE)
    assert Pc == full_space(1) and Qc == full_space(2)
    with pytest.raises(VFCError) as err:
        tropical_complete_map(double, UNIT, [0], UNIT)
    assert err.value.code == "NOT_MAPPED"


def test_map_completion_functorial_on_random_pairs():
    rng = random.Random(5)
    for _ in range(20):
        g1 = IntegralAffineMap(((rng.randint(1, 3),),), (rng.randint(-2, 2),))
        g2 = IntegralAffineMap(((rng.randint(1, 3),),), (rng.randint(-2, 2),))
        P = UNIT
        Q = polytope_from_constraints([([1], g1((F(0),))[0]), ([-1], -g1((F(1),))[0])])
        R = polytope_from_constraints([([1], g2((Q.vertices()[0]))[0]), ([-1], -g2(Q.vertices()[1])[0])])
        comp = g2.compose(g1)
        for p in (F(0), F(1, 3), F(1)):
            _, Pc, Qc = tropical_complete_map(g1, P, [p], Q)
            _, Qc2, Rc = tropical_complete_map(g2, Q, g1((p,)), R)
            _, Pc3, Rc3 = tropical_complete_map(comp, P, [p], R)
            assert Qc == Qc2 and Pc == Pc3 and Rc == Rc3
            for x in (F(-2), F(0), F(5)):
                assert comp((x,)) == g2(g1((x,)))


def test_json_round_trip():
    P = polytope_from_constraints([([1, 0], F(1, 2)), ([0, 1], 0, True)])
    assert polytope_from_json(P.to_json()) == P
    assert P.to_json()["constraints"][0]["b"] == "0"


def test_tropical_point_membership():
    TropicalPoint((0,), UNIT)
    with pytest.raises(VFCError):
        TropicalPoint((F(3, 2),), UNIT)


@pytest.mark.parametrize("constraints,text", [
    ([((1,), 0, False)], "[0, inf)"),
    ([((1,), 0, False), ((-1,), -1, False)], "[0, 1]"),
    ([((2,), 1, True), ((-1,), -3, False), ((1,), 0, False)], "(1/2, 3]"),
    ([((-1,), 2, True)], "(-inf, -2)"),
])
def test_intervals_print_as_intervals(constraints, text):
    assert str(polytope_from_constraints(constraints)) == text
