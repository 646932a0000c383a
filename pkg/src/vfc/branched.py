"""Weighted branched covers and branched sections.

A cover assigns to each admissible chart-open a finite branch set with a
rational probability measure and an equivalence relation (branches that are
not separated over the open). Measures are ``fractions.Fraction`` so every
probability identity is exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import VFCError
from .kcat import GRID_DENSITY, KuranishiCategory
from .regions import Region
from .sheaves import SheafHandle

MAX_HALVINGS = 20


class DisjointSet:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller representative so classes print deterministically
            lo, hi = sorted((ra, rb))
            self.parent[hi] = lo

    def classes(self) -> list:
        groups = {}
        for x in self.parent:
            groups.setdefault(self.find(x), []).append(x)
        return sorted(sorted(g) for g in groups.values())


@dataclass
class BranchSpace:
    branches: tuple
    measure: dict
    equiv: DisjointSet

    def __post_init__(self):
        if any(not isinstance(m, Fraction) or m <= 0 for m in self.measure.values()):
            raise VFCError("AXIOM_VIOLATION", "branch measures must be positive rationals")

    @property
    def total(self) -> Fraction:
        return sum(self.measure.values(), Fraction(0))

    def separated(self, i, j) -> bool:
        return self.equiv.find(i) != self.equiv.find(j)

    def to_json(self) -> dict:
        return {"branches": [list(b) if isinstance(b, tuple) else b for b in self.branches],
                "measure": {str(b): f"{m.numerator}/{m.denominator}" for b, m in self.measure.items()},
                "classes": [[str(b) for b in c] for c in self.equiv.classes()]}


def discrete(branches, measure) -> BranchSpace:
    return BranchSpace(tuple(branches), dict(measure), DisjointSet(branches))


def indiscrete(branches, measure) -> BranchSpace:
    ds = DisjointSet(branches)
    for b in branches[1:]:
        ds.union(branches[0], b)
    return BranchSpace(tuple(branches), dict(measure), ds)


@dataclass(frozen=True)
class ChartOpen:
    """Open subset ``region`` (box coordinates) of chart ``chart``."""

    chart: str
    region: Region


class WBCover:
    """Interface: ``space(O)`` and ``pullback(O_small, O_big, morphism)``.

    A morphism is ``None`` for an inclusion of opens in one chart or a group
    element index ``a`` for the automorphism ``x -> g_a x`` of the chart.
    """

    def space(self, O: ChartOpen) -> BranchSpace:
        raise NotImplementedError

    def pullback(self, O_small: ChartOpen, O_big: ChartOpen, morphism=None) -> dict:
        raise NotImplementedError

    # exact checks -----------------------------------------------------------
    def check_measure(self, O: ChartOpen) -> bool:
        return self.space(O).total == 1

    def check_pullback(self, O_small: ChartOpen, O_big: ChartOpen, morphism=None) -> bool:
        """Preimage sums equal (exactly) and pullbacks reflect the equivalence."""
        small, big = self.space(O_small), self.space(O_big)
        pb = self.pullback(O_small, O_big, morphism)
        for b in small.branches:
            pre = sum((big.measure[a] for a in big.branches if pb[a] == b), Fraction(0))
            if pre != small.measure[b]:
                return False
        for i, j in itertools.combinations(big.branches, 2):
            if not small.separated(pb[i], pb[j]) and big.separated(i, j):
                return False
        return True


class PerChartCover(WBCover):
    """Sections of the group cover of one chart over opens meeting ``U'``.

    Branches are group element indices with measure ``1/|G|``; they are
    separated inside ``U'`` and glued outside it. Opens missing the closure
    of ``U'`` get a single branch.
    """

    def __init__(self, K: KuranishiCategory, chart: str, U_prime: Region, density: float = GRID_DENSITY):
        c = K[chart]
        pts = U_prime.grid(density, max_points=20_000)
        if len(pts) and not np.all(c.U.contains(pts)):
            raise VFCError("BAD_NESTING", "U' must lie inside U", chart=chart)
        self.K = K
        self.chart = chart
        self.U_prime = U_prime
        self.density = density
        self.order = c.group.order

    def _where(self, O: ChartOpen):
        """(meets closure U', inside U', inside U) from sampled points of O."""
        c = self.K[O.chart]
        pts = O.region.grid(self.density, max_points=5_000)
        if O.region.dim and len(pts) == 0:
            lo, hi = O.region.bounds()
            pts = ((lo + hi) / 2)[None, :]
        X = _unbox(c, pts)
        X, mask = self.K.transport(self.chart, O.chart, X)
        if not mask.any():
            return False, False, False
        home = self.K[self.chart]
        B = home.box(X[mask])
        depth = self.U_prime.depth(B)
        meets = bool(np.any(depth >= -1e-12))
        inside = bool(mask.all() and np.all(depth > 0))
        in_U = bool(mask.all() and np.all(home.U.contains(B)))
        return meets, inside, in_U

    def space(self, O: ChartOpen) -> BranchSpace:
        meets, inside, in_U = self._where(O)
        if not meets or self.order == 1:
            return discrete(("*",), {"*": Fraction(1)})
        if not in_U:
            raise VFCError("BAD_NESTING", "open meets U' but leaves U", chart=O.chart)
        br = tuple(range(self.order))
        mu = {b: Fraction(1, self.order) for b in br}
        return discrete(br, mu) if inside else indiscrete(br, mu)

    def pullback(self, O_small, O_big, morphism=None) -> dict:
        small, big = self.space(O_small), self.space(O_big)
        if small.branches == ("*",):
            return {a: "*" for a in big.branches}
        if morphism is None:
            return {a: a for a in big.branches}
        table = self.K[self.chart].group.table
        return {a: int(table[a, morphism]) for a in big.branches}


class ProductCover(WBCover):
    """Product of covers: product measure, separated iff separated in some factor."""

    def __init__(self, covers: list):
        self.covers = list(covers)

    def space(self, O: ChartOpen) -> BranchSpace:
        spaces = [c.space(O) for c in self.covers]
        br = tuple(itertools.product(*[s.branches for s in spaces]))
        mu = {b: _prod(s.measure[x] for s, x in zip(spaces, b)) for b in br}
        ds = DisjointSet(br)
        for a, b in itertools.combinations(br, 2):
            if not any(s.separated(x, y) for s, x, y in zip(spaces, a, b)):
                ds.union(a, b)
        return BranchSpace(br, mu, ds)

    def pullback(self, O_small, O_big, morphism=None) -> dict:
        maps = [c.pullback(O_small, O_big, morphism if getattr(c, "chart", None) == O_small.chart else None)
                for c in self.covers]
        big = self.space(O_big)
        return {b: tuple(m[x] for m, x in zip(maps, b)) for b in big.branches}


def _prod(values) -> Fraction:
    out = Fraction(1)
    for v in values:
        out *= v
    return out


def _unbox(c, B):
    X = np.zeros((len(B), c.dim))
    n = c.chart.n
    X[:, :n] = B[:, :n]
    for j in range(c.chart.m):
        X[:, n + 2 * j] = B[:, n + j]
    return X


def per_chart_cover(K: KuranishiCategory, chart: str, U_prime: Region | None = None) -> PerChartCover:
    return PerChartCover(K, chart, U_prime if U_prime is not None else K[chart].F)


def product_cover(covers: list) -> ProductCover:
    return ProductCover(covers)


def default_cover(K: KuranishiCategory) -> WBCover:
    """Product of per-chart covers with ``U' = F`` for charts with nontrivial groups."""
    covers = [per_chart_cover(K, c) for c in K.order if K[c].group.order > 1]
    if not covers:
        covers = [per_chart_cover(K, K.order[0])]
    return product_cover(covers)


def neighborhood(K: KuranishiCategory, chart: str, x, cover: WBCover, start: float | None = None) -> ChartOpen:
    """Small ball around ``x`` on which ``cover`` is locally constant (radius halving)."""
    c = K[chart]
    b = c.box(np.atleast_2d(x))[0]
    r = start if start is not None else 0.05 * c.scale
    for _ in range(MAX_HALVINGS):
        O = ChartOpen(chart, Region.ball(b, r))
        smaller = ChartOpen(chart, Region.ball(b, r / 2))
        s1, s2 = cover.space(O), cover.space(smaller)
        if s1.branches == s2.branches and s1.equiv.classes() == s2.equiv.classes():
            return O
        r /= 2
    raise VFCError("AXIOM_VIOLATION", "cover is not locally constant near the point", chart=chart)


def has_trivial_stabilizers(K: KuranishiCategory, cover: WBCover, fixtures: list) -> bool:
    """``fixtures``: ``(chart, point, element index)`` with the element fixing the point."""
    for chart, x, a in fixtures:
        g = K[chart].group.elements[a]
        if not np.allclose(g.act(np.atleast_2d(x)), np.atleast_2d(x), atol=1e-9):
            raise VFCError("AXIOM_VIOLATION", "fixture element does not fix its point", chart=chart)
        O = neighborhood(K, chart, x, cover)
        sp = cover.space(O)
        pb = cover.pullback(O, O, a)
        if any(not sp.separated(i, pb[i]) for i in sp.branches):
            return False
    return True


# ---------------------------------------------------------------------------
# lifted sheaf S^I for the group covers of single charts

class LiftedSheaf(SheafHandle):
    """Branched sections: values carry a branch axis after the point axis.

    Chart ``c`` has ``|G_c|`` branches (group elements); transports between
    charts with different branch counts broadcast a single branch or require
    the source branches to agree. ``average`` is the branched average: branch
    ``h`` becomes the pullback by ``h`` of branch 0, blended towards the plain
    average outside ``U'`` through a collar, so branches glue where the cover
    is indiscrete.
    """

    def __init__(self, base: SheafHandle, U_prime: dict | None = None, collar: float = 0.1):
        self.base = base
        self.name = base.name + "^I"
        self.U_prime = U_prime or {}
        self.collar = collar

    def nbranch(self, K, chart):
        return K[chart].group.order

    def transport(self, K, src, dst, section):
        ns, nd = self.nbranch(K, src), self.nbranch(K, dst)
        moved = [self.base.transport(K, src, dst, _branch(section, b)) for b in range(ns)]

        def f(Y, v=()):
            outs = [m(Y, v) for m in moved]
            mask = outs[0][1]
            vals = np.stack([o[0] for o in outs], axis=1)
            if ns == nd:
                return vals, mask
            if ns == 1:
                return np.repeat(vals, nd, axis=1), mask
            if nd == 1:
                spread = np.max(np.abs(vals - vals[:, :1]).reshape(len(vals), -1), axis=1, initial=0.0)
                if np.any(spread[mask] > 1e-9):
                    raise VFCError("AXIOM_VIOLATION", "separated branches cannot move to a chart with one branch",
                                   source=src, target=dst)
                return vals[:, :1], mask
            raise VFCError("AXIOM_VIOLATION", "branch counts of the two charts are incompatible",
                           source=src, target=dst)
        return f

    def local_section(self, K, chart, rng):
        sec = self.base.local_section(K, chart, rng)
        n = self.nbranch(K, chart)
        return lambda X, v=(): np.repeat(sec(X, v)[:, None], n, axis=1)

    def act(self, K, chart, g, section):
        G = K[chart].group
        a = G.find(g)
        ainv = G.inverse_index(a)
        pulled = [self.base.act(K, chart, g, _branch(section, int(G.table[h, ainv]))) for h in range(G.order)]
        return lambda X, v=(): np.stack([p(X, v) for p in pulled], axis=1)

    def average(self, K, chart, section):
        G = K[chart].group
        if G.order == 1:
            return section
        first = _branch(section, 0)
        pulled = [self.base.act(K, chart, g, first) for g in G.elements]
        c = K[chart]
        Up = self.U_prime.get(chart, c.F)
        lo, hi = Up.bounds()
        delta = self.collar * float(np.min(hi - lo))

        def avg(X, v=()):
            vals = np.stack([p(X, v) for p in pulled], axis=1)
            w = Up.level(c.box(X), 0.0, delta)   # 0 off U', 1 past the collar inside it
            mean = vals.mean(axis=1, keepdims=True)
            shape = (-1, 1) + (1,) * (vals.ndim - 2)
            return w.reshape(shape) * vals + (1.0 - w.reshape(shape)) * mean
        return avg

    def discrepancy(self, a, b):
        return np.max(np.stack([self.base.discrepancy(a[:, k], b[:, k]) for k in range(a.shape[1])]), axis=0)


def _branch(section, b):
    return lambda X, v=(): section(X, v)[:, b]


def lift_sheaf(S: SheafHandle, cover: WBCover | None = None, U_prime: dict | None = None,
               collar: float = 0.1) -> LiftedSheaf:
    if isinstance(cover, PerChartCover):
        U_prime = dict(U_prime or {}, **{cover.chart: cover.U_prime})
    elif isinstance(cover, ProductCover):
        U_prime = dict(U_prime or {}, **{c.chart: c.U_prime for c in cover.covers if isinstance(c, PerChartCover)})
    return LiftedSheaf(S, U_prime, collar)
