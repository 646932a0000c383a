"""Small Kuranishi categories used by the checks, the CLI and the tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .charts import ExplodedChart, manifold_chart
from .kcat import (AffineBaseMap, FiniteGroup, KChart, KuranishiCategory, Transition, build_kuranishi,
                   identity_transition, pullback_kuranishi, weak_product)
from .regions import Ball, Box, Region
from .tropical import polytope_from_constraints


@dataclass
class Fixture:
    name: str
    K: KuranishiCategory
    pi: dict                        # chart id -> (X, vertex) -> (P, dim A)
    dim_a: int
    core_regions: dict | None = None
    complete: bool = True
    notes: str = ""
    extra: dict = field(default_factory=dict)


def _z(X):
    return X[:, 0] + 1j * X[:, 1]


def _col(f):
    return lambda X, v=(): f(np.atleast_2d(X))[:, None]


def _first_coord(X, v=()):
    return np.atleast_2d(X)[:, :1]


SQUARE = (Region.box([-3, -3], [3, 3]), Region.box([-2.5, -2.5], [2.5, 2.5]), Region.box([-2, -2], [2, 2]))


def _disk_chart(cid, dbar, group=None, orientation=1):
    sharp, prime, core = SQUARE
    return KChart(cid, manifold_chart(sharp, orientation), core, prime, 1, _col(dbar), group,
                  base_map=_first_coord, base_coords=(0,))


def z_fixture() -> Fixture:
    """dbar = z on a square: one positive zero."""
    K = build_kuranishi([_disk_chart("disk", _z)], [], base_dim=1, name="z")
    return Fixture("z", K, {"disk": _first_coord}, 1)


def z_squared_fixture() -> Fixture:
    K = build_kuranishi([_disk_chart("disk", lambda X: _z(X) ** 2)], [], base_dim=1, name="z2")
    return Fixture("z2", K, {"disk": _first_coord}, 1)


def zbar_fixture() -> Fixture:
    """dbar = conj(z): one negative zero."""
    K = build_kuranishi([_disk_chart("disk", lambda X: np.conj(_z(X)))], [], base_dim=1, name="zbar")
    return Fixture("zbar", K, {"disk": _first_coord}, 1)


def z2_orbifold_fixture() -> Fixture:
    """dbar = z^2 with Z/2 acting by z -> -z; the weighted count is 1."""
    G = FiniteGroup.cyclic_rotation(2, 2, 1)
    K = build_kuranishi([_disk_chart("disk", lambda X: _z(X) ** 2, G)], [], base_dim=1, name="z2/Z2")
    return Fixture("z2_orbifold", K, {"disk": _first_coord}, 1)


def two_chart_fixture() -> Fixture:
    """dbar = z on two overlapping boxes of the plane."""
    left = KChart("left", manifold_chart(Region.box([-3, -3], [1, 3])), Region.box([-2, -2], [0.4, 2]),
                  Region.box([-2.5, -2.5], [0.7, 2.5]), 1, _col(_z), base_map=_first_coord, base_coords=(0,))
    right = KChart("right", manifold_chart(Region.box([-1, -3], [3, 3])), Region.box([-0.4, -2], [2, 2]),
                   Region.box([-0.7, -2.5], [2.5, 2.5]), 1, _col(_z), base_map=_first_coord, base_coords=(0,))
    t = identity_transition("left", "right", Region.box([-1, -3], [1, 3]), 2)
    K = build_kuranishi([left, right], [t], base_dim=1, name="z-two-charts")
    return Fixture("two_chart", K, {"left": _first_coord, "right": _first_coord}, 1)


def _circle_dbar(X, v=()):
    X = np.atleast_2d(X)
    return ((X[:, 0] ** 2 + X[:, 1] ** 2 + X[:, 2] ** 2 - 1.0) + 1j * X[:, 1])[:, None]


def circle_fixture() -> Fixture:
    """Three real dimensions, rank one: the zero set is the unit circle in the (x, t) plane."""
    c = KChart("cube", manifold_chart(Region.box([-3] * 3, [3] * 3)), Region.box([-2] * 3, [2] * 3),
               Region.box([-2.5] * 3, [2.5] * 3), 1, _circle_dbar, base_map=_first_coord, base_coords=(0,))
    K = build_kuranishi([c], [], base_dim=1, name="circle")
    core = {"cube": Region([Ball((0.0, 0.0, 0.0), 1.4)])}
    return Fixture("circle", K, {"cube": _first_coord}, 1, core_regions=core)


def two_chart_circle_fixture() -> Fixture:
    left = KChart("left", manifold_chart(Region.box([-3, -3, -3], [1, 3, 3])),
                  Region.box([-2, -2, -2], [0.4, 2, 2]), Region.box([-2.5, -2.5, -2.5], [0.7, 2.5, 2.5]), 1,
                  _circle_dbar, base_map=_first_coord, base_coords=(0,))
    right = KChart("right", manifold_chart(Region.box([-1, -3, -3], [3, 3, 3])),
                   Region.box([-0.4, -2, -2], [2, 2, 2]), Region.box([-0.7, -2.5, -2.5], [2.5, 2.5, 2.5]), 1,
                   _circle_dbar, base_map=_first_coord, base_coords=(0,))
    t = identity_transition("left", "right", Region.box([-1, -3, -3], [1, 3, 3]), 3)
    K = build_kuranishi([left, right], [t], base_dim=1, name="circle-two-charts")
    core = {"left": Region.box([-1.2, -0.3, -1.2], [0.2, 0.3, 1.2]),
            "right": Region.box([-0.2, -0.3, -1.2], [1.2, 0.3, 1.2])}
    return Fixture("two_chart_circle", K, {"left": _first_coord, "right": _first_coord}, 1, core_regions=core)


# -- tropical fixtures -------------------------------------------------------

def _coef(X):
    """The coefficient c = exp(s + i t) of a one-dimensional tropical chart."""
    X = np.atleast_2d(X)
    return np.exp(X[:, 0] + 1j * X[:, 1])


def _tropical_s(X, v=()):
    return np.atleast_2d(X)[:, :1]


TROPICAL_REGIONS = (Region.box([-3], [3]), Region.box([-2.5], [2.5]), Region.box([-2], [2]))


def ray_fixture() -> Fixture:
    """Tropical line over [0, inf): dbar = c - 1 on the vertex stratum."""
    P = polytope_from_constraints([([1], 0)])
    sharp, prime, core = TROPICAL_REGIONS
    c = KChart("ray", ExplodedChart(0, 1, P, sharp), core, prime, 1, _col(lambda X: _coef(X) - 1.0),
               base_map=_tropical_s, base_coords=(0,))
    K = build_kuranishi([c], [], base_dim=1, name="ray")
    return Fixture("ray", K, {"ray": _tropical_s}, 1)


def open_ray_fixture() -> Fixture:
    """The same chart over (0, inf): no vertex, so not complete."""
    P = polytope_from_constraints([([1], 0, True)])
    sharp, prime, core = TROPICAL_REGIONS
    c = KChart("open", ExplodedChart(0, 1, P, sharp), core, prime, 1, _col(lambda X: _coef(X) - 1.0))
    K = build_kuranishi([c], [], name="open-ray")
    return Fixture("open_ray", K, {}, 1, complete=False)


def segment_fixture() -> Fixture:
    """Tropical line over [0, 1]: dbar = c - 1 at vertex 0 and c^2 - 4 at vertex 1."""
    P = polytope_from_constraints([([1], 0), ([-1], -1)])
    sharp, prime, core = TROPICAL_REGIONS

    def dbar(X, v=()):
        c = _coef(X)
        return ((c - 1.0) if v[0] == 0 else (c * c - 4.0))[:, None]

    ch = KChart("segment", ExplodedChart(0, 1, P, sharp), core, prime, 1, dbar, base_map=_tropical_s,
                base_coords=(0,))
    K = build_kuranishi([ch], [], base_dim=1, name="segment")
    return Fixture("segment", K, {"segment": _tropical_s}, 1)


# -- three charts with groups 1, Z/2, Z/3 -------------------------------------

def _shrunk(boxes, d):
    return Region([Box(tuple(np.array(lo) + d), tuple(np.array(hi) - d)) for lo, hi in boxes])


def three_chart_fixture() -> Fixture:
    """A w-plane chart avoiding +-1 and two orbifold disks: w = -1 + y^2 (Z/2), w = 1 + y^3 (Z/3).

    dbar is w in every chart, so the three are coherent; the only zero is
    w = 0 in the plane chart.
    """
    # the plane minus squares of half-width 0.2 around +-1 (0.5 once shrunk to F)
    boxes = [((-3, 0.2), (3, 3)), ((-3, -3), (3, -0.2)), ((-3, -3), (-1.2, 3)), ((-0.8, -3), (0.8, 3)),
             ((1.2, -3), (3, 3))]
    sharp = Region([Box(lo, hi) for lo, hi in boxes])
    plane = KChart("plane", manifold_chart(sharp), _shrunk(boxes, 0.3), _shrunk(boxes, 0.15), 1, _col(_z))
    # radius^order < 1 keeps w = 0 out of every disk image
    disks = (Region([Ball((0.0, 0.0), 0.95)]), Region([Ball((0.0, 0.0), 0.9)]), Region([Ball((0.0, 0.0), 0.85)]))

    def cplx(X):
        return _z(np.atleast_2d(X))

    def real(w):
        return np.stack([w.real, w.imag], axis=1)

    charts = [plane]
    trans = []
    for cid, order, center in (("z2", 2, -1.0), ("z3", 3, 1.0)):
        G = FiniteGroup.cyclic_rotation(order, 2, 1)
        fwd = (lambda order, center: lambda Y, v=(): real(center + cplx(Y) ** order))(order, center)
        dbar = (lambda order, center: lambda X, v=(): (center + cplx(X) ** order)[:, None])(order, center)
        charts.append(KChart(cid, manifold_chart(disks[0]), disks[2], disks[1], 1, dbar, G))
        ident = lambda X, v=(): np.atleast_2d(X)
        root = (lambda order, center: lambda W, v=(): real((cplx(W) - center).astype(complex) ** (1.0 / order)))(
            order, center)
        param = manifold_chart(disks[0])
        trans.append(Transition(cid, "plane", param, ident, fwd, ident, root, None))
    K = build_kuranishi(charts, trans, name="three-charts")
    return Fixture("three_chart", K, {}, 0)


# -- products and pullbacks ----------------------------------------------------

def product_fixture() -> Fixture:
    """Weak product of the z and z^2 fixtures; maps to A = R^2 by (x1, x2)."""
    K = weak_product([z_fixture().K, z_squared_fixture().K])
    cid = K.order[0]
    pi = {cid: lambda X, v=(): np.atleast_2d(X)[:, [0, 2]]}
    return Fixture("product", K, pi, 2)


def pullback_fixture() -> Fixture:
    """The z fixture pulled back along the base map z' -> 2 z' + 1/2."""
    base = z_fixture()
    y = AffineBaseMap(np.array([[2.0]]), np.array([0.5]), Region.box([-3], [3]))
    K = pullback_kuranishi(base.K, y)
    return Fixture("pullback", K, {c: (lambda c: lambda X, v=(): K[c].base_map(X, v))(c) for c in K.order}, 1,
                   extra={"base": base, "map": y})


def pullback_line_fixture() -> Fixture:
    """The z fixture pulled back along R^2 -> R, (a, b) -> a: the product with a line (not compact)."""
    base = z_fixture()
    y = AffineBaseMap(np.array([[1.0, 0.0]]), np.zeros(1), Region.box([-3, -3], [3, 3]))
    K = pullback_kuranishi(base.K, y)
    return Fixture("pullback_line", K, {c: (lambda c: lambda X, v=(): K[c].base_map(X, v))(c) for c in K.order},
                   2, complete=False, extra={"base": base, "map": y})


REGISTRY = {
    "z": z_fixture,
    "z2": z_squared_fixture,
    "zbar": zbar_fixture,
    "z2_orbifold": z2_orbifold_fixture,
    "two_chart": two_chart_fixture,
    "circle": circle_fixture,
    "two_chart_circle": two_chart_circle_fixture,
    "ray": ray_fixture,
    "open_ray": open_ray_fixture,
    "segment": segment_fixture,
    "three_chart": three_chart_fixture,
    "product": product_fixture,
    "pullback": pullback_fixture,
    "pullback_line": pullback_line_fixture,
}


def get(name: str) -> Fixture:
    from .errors import VFCError
    if name not in REGISTRY:
        raise VFCError("SCHEMA", f"unknown fixture {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name]()
