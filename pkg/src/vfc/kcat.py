"""Finite presentations of Kuranishi categories.

A presentation is an ordered list of :class:`KChart` (a chart with three
nested regions, a finite group, a trivialized obstruction bundle ``C^d`` and
a section ``dbar``) plus a list of :class:`Transition` records. "Curves" are
points of chart domains and "families" are open sub-regions; everything the
library verifies is sampled on deterministic grids.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .charts import ExplodedChart
from .errors import VFCError
from .numerics import dedupe, fd_jacobian, min_norm_newton, nearest_distance, realify, smallest_singular
from .regions import Region, smooth_step
from .tropical import full_space, is_complete as polytope_is_complete

GRID_DENSITY = 17.0
TAU_TRANS = 1e-4
FD_H = 1e-6


# ---------------------------------------------------------------------------
# finite groups acting on charts and on their bundles

@dataclass(frozen=True)
class GroupElement:
    """``x -> A x + b`` on stratum coordinates, ``V``-action by ``R``."""

    matrix: np.ndarray
    offset: np.ndarray
    vrep: np.ndarray

    def act(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(X) @ self.matrix.T + self.offset

    def act_v(self, vals: np.ndarray) -> np.ndarray:
        return vals @ self.vrep.T

    def compose(self, other: "GroupElement") -> "GroupElement":
        """``self o other``."""
        return GroupElement(self.matrix @ other.matrix, self.matrix @ other.offset + self.offset,
                            self.vrep @ other.vrep)

    def close_to(self, other: "GroupElement", tol: float = 1e-9) -> bool:
        return (np.allclose(self.matrix, other.matrix, atol=tol) and np.allclose(self.offset, other.offset, atol=tol)
                and np.allclose(self.vrep, other.vrep, atol=tol))

    def inverse(self) -> "GroupElement":
        Ainv = np.linalg.inv(self.matrix)
        return GroupElement(Ainv, -Ainv @ self.offset, np.linalg.inv(self.vrep))


class FiniteGroup:
    """Elements listed with the identity first, plus a multiplication table."""

    def __init__(self, elements: list[GroupElement], name: str = ""):
        self.elements = list(elements)
        self.name = name or f"order {len(self.elements)}"
        n = len(self.elements)
        self.table = np.zeros((n, n), dtype=int)
        for a, b in itertools.product(range(n), repeat=2):
            prod = self.elements[a].compose(self.elements[b])
            idx = self.find(prod)
            if idx is None:
                raise VFCError("GROUP_NOT_CLOSED", f"product of elements {a} and {b} is not in the group")
            self.table[a, b] = idx

    @property
    def order(self) -> int:
        return len(self.elements)

    def find(self, g: GroupElement):
        for k, h in enumerate(self.elements):
            if h.close_to(g):
                return k
        return None

    def inverse_index(self, a: int) -> int:
        return int(np.nonzero(self.table[a] == 0)[0][0])

    @classmethod
    def trivial(cls, dim: int, rank: int) -> "FiniteGroup":
        return cls([GroupElement(np.eye(dim), np.zeros(dim), np.eye(rank, dtype=complex))], "trivial")

    @classmethod
    def generated(cls, generators: list[GroupElement], dim: int, rank: int, max_order: int = 64,
                  name: str = "") -> "FiniteGroup":
        ident = GroupElement(np.eye(dim), np.zeros(dim), np.eye(rank, dtype=complex))
        elems = [ident]
        frontier = [ident]
        while frontier:
            nxt = []
            for g in frontier:
                for s in generators:
                    h = s.compose(g)
                    if not any(h.close_to(e) for e in elems):
                        elems.append(h)
                        nxt.append(h)
                        if len(elems) > max_order:
                            raise VFCError("GROUP_NOT_CLOSED", f"generator words exceed {max_order} elements")
            frontier = nxt
        return cls(elems, name)

    @classmethod
    def cyclic_rotation(cls, order: int, dim: int, rank: int, plane=(0, 1), vchar: int = 0,
                        name: str = "") -> "FiniteGroup":
        """Z/order rotating the coordinate plane ``plane``; V twisted by ``vchar``."""
        ang = 2 * np.pi / order
        A = np.eye(dim)
        i, j = plane
        A[i, i], A[i, j], A[j, i], A[j, j] = np.cos(ang), -np.sin(ang), np.sin(ang), np.cos(ang)
        R = np.eye(rank, dtype=complex) * np.exp(1j * ang * vchar)
        return cls.generated([GroupElement(A, np.zeros(dim), R)], dim, rank, name=name or f"Z/{order}")


# ---------------------------------------------------------------------------
# charts and transitions

@dataclass
class KChart:
    id: str
    chart: ExplodedChart          # the largest extension F-sharp (its region)
    F: Region
    F_prime: Region
    rank: int
    dbar: Callable                # (X, vertex) -> (P, rank) complex
    group: FiniteGroup | None = None
    dbar_jac: Callable | None = None  # (X, vertex) -> (P, 2 rank, dim) real
    U: Region | None = None
    base_map: Callable | None = None  # (X, vertex) -> (P, dim Z)
    base_coords: tuple | None = None  # coordinate indices realizing base_map, if it is a projection
    labels: tuple = ()

    def __post_init__(self):
        if self.group is None:
            self.group = FiniteGroup.trivial(self.dim, self.rank)
        if self.U is None:
            self.U = self.F_prime

    @property
    def F_sharp(self) -> Region:
        return self.chart.region if isinstance(self.chart.region, Region) else None

    @property
    def dim(self) -> int:
        return self.chart.dim

    @property
    def scale(self) -> float:
        return self.F_sharp.scale if self.F_sharp is not None else 1.0

    @property
    def periodic(self) -> tuple:
        return tuple(self.chart.n + 2 * j + 1 for j in range(self.chart.m))

    def box(self, X):
        return self.chart.box_coords(X)

    def in_region(self, which: str, X) -> np.ndarray:
        reg = {"F": self.F, "F'": self.F_prime, "F#": self.F_sharp, "U": self.U}[which]
        return reg.contains(self.box(X))

    def dbar_values(self, X, vertex=()) -> np.ndarray:
        return np.asarray(self.dbar(np.atleast_2d(X), vertex), dtype=complex).reshape(-1, self.rank)

    def dbar_jacobian(self, X, vertex=()) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.dbar_jac is not None:
            return np.asarray(self.dbar_jac(X, vertex), dtype=float)
        return fd_jacobian(lambda Y: self.dbar_values(Y, vertex), X, FD_H * self.scale)

    def grid(self, which: str = "F#", vertex=(), density: float = GRID_DENSITY, max_points: int = 40_000):
        reg = {"F": self.F, "F'": self.F_prime, "F#": self.F_sharp, "U": self.U}[which]
        tmp = ExplodedChart(self.chart.n, self.chart.m, self.chart.polytope, reg)
        return tmp.sample_grid(vertex, density=density, angles=8, max_points=max_points)

    def strata(self):
        return self.chart.strata()

    def hol_points(self, density: float = GRID_DENSITY, max_seeds: int = 20_000) -> dict:
        """Sampled zeros of dbar per stratum, closed under the group."""
        out = {}
        for v in self.strata():
            seeds = self.grid("F#", v, density=density, max_points=max_seeds)
            if len(seeds) == 0:
                out[v] = np.zeros((0, self.dim))
                continue
            vals = np.linalg.norm(self.dbar_values(seeds, v), axis=1)
            if not np.any(np.isfinite(vals)):
                out[v] = np.zeros((0, self.dim))
                continue
            # only start from seeds where dbar is small relative to its spread on the grid
            thresh = np.quantile(vals[np.isfinite(vals)], 0.25)
            seeds = seeds[vals <= thresh]
            X, conv = min_norm_newton(lambda Y: self.dbar_values(Y, v), lambda Y: self.dbar_jacobian(Y, v),
                                      seeds, tol=1e-11 * max(1.0, self.scale), periodic=self.periodic,
                                      max_step=0.25 * self.scale)
            X = X[conv]
            X = X[self.in_region("F#", X)] if len(X) else X
            if len(X):
                X = np.concatenate([g.act(X) for g in self.group.elements])
                X = X[self.in_region("F#", X)]
                spacing = 1.0 / density
                X = X[dedupe(X, 0.25 * spacing, self.periodic)]
            out[v] = X
        return out


@dataclass
class Transition:
    """Overlap between charts ``i`` and ``j`` parametrized by ``param``.

    ``phi_i``/``phi_j`` map parameter points into the two charts; ``inv_i`` and
    ``inv_j`` are declared local inverses (retractions when the chart is
    bigger than the parameter space). ``vmap`` includes the smaller bundle
    into the bigger one: ``V_small -> V_big`` as a complex matrix, with
    ``small`` naming the chart id of the source.
    """

    i: str
    j: str
    param: ExplodedChart
    phi_i: Callable
    phi_j: Callable
    inv_i: Callable
    inv_j: Callable
    vmap: np.ndarray | None
    small: str | None = None

    def maps(self, chart_id: str):
        if chart_id == self.i:
            return self.phi_i, self.inv_i
        if chart_id == self.j:
            return self.phi_j, self.inv_j
        raise KeyError(chart_id)

    def other(self, chart_id: str) -> str:
        return self.j if chart_id == self.i else self.i


def identity_transition(i: str, j: str, overlap: Region, n: int, vmap=None, small=None) -> Transition:
    """Overlap of two charts sharing coordinates, e.g. two boxes in the same plane."""
    ident = lambda X, v=(): np.atleast_2d(X)
    param = ExplodedChart(n, 0, full_space(0), overlap)
    return Transition(i, j, param, ident, ident, ident, ident, vmap, small)


class KuranishiCategory:
    def __init__(self, charts: list[KChart], transitions: list[Transition], base_dim: int = 0,
                 name: str = ""):
        self.charts = {c.id: c for c in charts}
        self.order = [c.id for c in charts]
        self.transitions = list(transitions)
        self.base_dim = base_dim
        self.name = name
        self._by_pair = {}
        for t in self.transitions:
            self._by_pair[(t.i, t.j)] = t
            self._by_pair[(t.j, t.i)] = t

    def __getitem__(self, cid: str) -> KChart:
        return self.charts[cid]

    def transition(self, a: str, b: str) -> Transition | None:
        return self._by_pair.get((a, b))

    def neighbors(self, cid: str) -> list[str]:
        return [o for o in self.order if o != cid and (cid, o) in self._by_pair]

    def transport(self, src: str, dst: str, Y, vertex=(), tol: float = 1e-7):
        """Points of chart ``src`` corresponding to points ``Y`` of chart ``dst``.

        Returns ``(X_src, mask)``; ``mask`` marks points where the transition
        applies. When ``dst`` is bigger than the overlap, its declared inverse
        is a retraction and the result is the pulled-back (extended) point.
        """
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if src == dst:
            return Y.copy(), np.ones(len(Y), dtype=bool)
        t = self.transition(src, dst)
        if t is None:
            return np.full((len(Y), self.charts[src].dim), np.nan), np.zeros(len(Y), dtype=bool)
        phi_dst, inv_dst = t.maps(dst)
        phi_src, _ = t.maps(src)
        W = np.atleast_2d(inv_dst(Y, vertex))
        mask = t.param.contains(W, vertex) if len(W) else np.zeros(0, dtype=bool)
        if self.charts[dst].dim <= t.param.dim:
            back = np.atleast_2d(phi_dst(W, vertex))
            mask &= np.linalg.norm(back - Y, axis=1) <= tol * max(1.0, self.charts[dst].scale)
        X = np.atleast_2d(phi_src(W, vertex))
        mask &= self.charts[src].in_region("F#", X)
        return X, mask

    def vmap_between(self, src: str, dst: str):
        """Complex matrix taking V_src values to V_dst values (pseudo-inverse if shrinking)."""
        if src == dst:
            return np.eye(self.charts[src].rank, dtype=complex)
        t = self.transition(src, dst)
        if t is None:
            # no overlap: transports are empty, any matrix of the right shape will do
            return np.eye(self.charts[dst].rank, self.charts[src].rank, dtype=complex)
        E = t.vmap if t.vmap is not None else np.eye(self.charts[src].rank, dtype=complex)
        if t.small is None or t.small == src:
            return E
        return np.linalg.pinv(E)

    def function_on(self, dst: str, per_chart: dict, fill: float = 0.0):
        """Evaluate a function given per chart at points of chart ``dst``.

        ``per_chart[src]`` is evaluated at transported points; the result is the
        value from ``dst`` itself when present, else from the first chart that
        covers the point.
        """
        def f(Y, vertex=()):
            Y = np.atleast_2d(Y)
            out = np.full(len(Y), fill, dtype=float)
            done = np.zeros(len(Y), dtype=bool)
            for src in [dst] + [o for o in self.order if o != dst]:
                if src not in per_chart:
                    continue
                X, mask = self.transport(src, dst, Y, vertex)
                mask &= ~done
                if mask.any():
                    out[mask] = per_chart[src](X[mask], vertex)
                    done |= mask
            return out
        return f


# ---------------------------------------------------------------------------
# validation

def _sample_param(t: Transition, density: float):
    for v in t.param.strata():
        yield v, t.param.sample_grid(v, density=density, angles=6, max_points=4000)


def build_kuranishi(charts: list[KChart], transitions: list[Transition], base_dim: int = 0,
                    name: str = "", density: float = GRID_DENSITY) -> KuranishiCategory:
    """Assemble and validate a presentation; raises VFCError naming the clause."""
    ids = [c.id for c in charts]
    if len(set(ids)) != len(ids):
        raise VFCError("SCHEMA", "duplicate chart ids")
    for c in charts:
        _check_chart(c, density)
    seen = set()
    for t in transitions:
        if t.i not in ids or t.j not in ids:
            raise VFCError("NOT_LOCALLY_FINITE", f"transition {t.i}-{t.j} references an undeclared chart")
        key = frozenset((t.i, t.j))
        if key in seen or t.i == t.j:
            raise VFCError("NOT_LOCALLY_FINITE", f"repeated transition between {t.i} and {t.j}")
        seen.add(key)
    K = KuranishiCategory(charts, transitions, base_dim, name)
    for t in transitions:
        _check_transition(K, t, density)
    return K


def _check_chart(c: KChart, density: float):
    if c.F_sharp is None:
        raise VFCError("SCHEMA", "chart needs a single F-sharp region", chart=c.id)
    for inner, outer, label in ((c.F, c.F_prime, "F in F'"), (c.F_prime, c.F_sharp, "F' in F#"),
                                (c.F, c.U, "F in U")):
        g = inner.grid(density / 2, max_points=20_000)
        if len(g) and not np.all(outer.contains(g)):
            raise VFCError("BAD_NESTING", f"{label} fails on sampled points", chart=c.id)
    lo, hi = c.F.bounds()
    lo2, hi2 = c.F_prime.bounds()
    if np.any(lo <= lo2) or np.any(hi >= hi2):
        if not np.all(np.isinf(lo2[lo <= lo2])) or not np.all(np.isinf(hi2[hi >= hi2])):
            raise VFCError("BAD_NESTING", "closure of F is not inside F'", chart=c.id)
    G = c.group
    for k, g in enumerate(G.elements):
        if g.matrix.shape != (c.dim, c.dim) or g.vrep.shape != (c.rank, c.rank):
            raise VFCError("BAD_DIM", "group element of the wrong size", chart=c.id)
        if np.linalg.det(g.matrix) <= 0:
            raise VFCError("GROUP_NOT_CLOSED", "group element reverses orientation", chart=c.id, element=k)
    if G.order > 1:
        for v in c.strata():
            X = c.grid("F#", v, density=density / 2, max_points=4000)
            for k, g in enumerate(G.elements[1:], start=1):
                for which in ("F", "F'", "F#"):
                    inside = c.in_region(which, X)
                    if not np.all(c.in_region(which, g.act(X[inside]))):
                        raise VFCError("BAD_NESTING", f"region {which} is not invariant under the group",
                                       chart=c.id, element=k)
                gx = g.act(X)
                ok = c.in_region("F#", gx)
                lhs = c.dbar_values(gx[ok], v)
                rhs = g.act_v(c.dbar_values(X[ok], v))
                if np.max(np.abs(lhs - rhs), initial=0.0) > 1e-8 * (1 + np.max(np.abs(rhs), initial=0.0)):
                    raise VFCError("AXIOM_VIOLATION", "dbar is not equivariant", chart=c.id, element=k)


def _check_transition(K: KuranishiCategory, t: Transition, density: float):
    ci, cj = K[t.i], K[t.j]
    if t.vmap is None:
        if ci.rank != cj.rank:
            raise VFCError("BAD_NESTING", "bundles of different rank need a declared inclusion",
                           pair=f"{t.i}-{t.j}")
        E = np.eye(ci.rank, dtype=complex)
        small = t.small or t.i
    else:
        E = np.asarray(t.vmap, dtype=complex)
        small = t.small
        if small not in (t.i, t.j):
            raise VFCError("BAD_NESTING", "declared inclusion must name its source chart", pair=f"{t.i}-{t.j}")
    big = t.other(small)
    if E.shape != (K[big].rank, K[small].rank) or np.linalg.matrix_rank(E) < K[small].rank:
        raise VFCError("BAD_NESTING", "V inclusion is not an injective map V_small -> V_big",
                       pair=f"{t.i}-{t.j}")
    phi_s, _ = t.maps(small)
    phi_b, _ = t.maps(big)
    scale = max(ci.scale, cj.scale)
    for v, W in _sample_param(t, density / 2):
        if len(W) == 0:
            continue
        Xs, Xb = phi_s(W, v), phi_b(W, v)
        ok = K[small].in_region("F#", Xs) & K[big].in_region("F#", Xb)
        if not np.any(ok):
            continue
        lhs = K[big].dbar_values(Xb[ok], v)
        rhs = K[small].dbar_values(Xs[ok], v) @ E.T
        if np.max(np.abs(lhs - rhs)) > 1e-9 * (1 + np.max(np.abs(lhs))):
            raise VFCError("AXIOM_VIOLATION", "dbar is not coherent under the transition",
                           pair=f"{t.i}-{t.j}")
        if K[big].rank > K[small].rank:
            # transversality of dbar_big to V_small along the image
            Q = _complement_projector(E)
            J = K[big].dbar_jacobian(Xb[ok], v)
            sig = smallest_singular(np.einsum("ab,pbn->pan", Q, J))
            lip = max(1.0, float(np.max(np.linalg.norm(J, axis=(1, 2)))))
            if np.min(sig) < TAU_TRANS * lip:
                raise VFCError("NOT_TRANSVERSE", "dbar is not transverse to the smaller bundle",
                               pair=f"{t.i}-{t.j}", margin=float(np.min(sig)))


def _complement_projector(E: np.ndarray) -> np.ndarray:
    """Real matrix projecting R^{2 big} onto an orthonormal basis of (image E)-perp."""
    big, small = E.shape
    Er = np.zeros((2 * big, 2 * small))
    for k in range(small):
        col = np.zeros(2 * big)
        col[0::2], col[1::2] = E[:, k].real, E[:, k].imag
        coli = np.zeros(2 * big)
        coli[0::2], coli[1::2] = -E[:, k].imag, E[:, k].real
        Er[:, 2 * k], Er[:, 2 * k + 1] = col, coli
    u, s, vt = np.linalg.svd(Er, full_matrices=True)
    return u[:, 2 * small:].T


# ---------------------------------------------------------------------------
# properness

def hol_sample(K: KuranishiCategory, density: float = GRID_DENSITY) -> dict:
    return {cid: K[cid].hol_points(density) for cid in K.order}


def is_proper(K: KuranishiCategory, density: float = GRID_DENSITY) -> tuple[bool, dict]:
    """Every sampled holomorphic point lies in the interior of some chart's F."""
    hol = hol_sample(K, density)
    escapes = 0
    total = 0
    for cid, per in hol.items():
        for v, X in per.items():
            total += len(X)
            if not len(X):
                continue
            covered = np.zeros(len(X), dtype=bool)
            for other in K.order:
                Xo, mask = K.transport(other, cid, X, v)
                if mask.any():
                    covered[mask] |= K[other].F.depth(K[other].box(Xo[mask])) > 0
            # points near the edge of F-sharp indicate a hol set running out of the chart
            edge = K[cid].F_sharp.depth(K[cid].box(X)) < 0.5 / density
            escapes += int(np.sum(~covered | edge))
    return escapes == 0, {"hol_points": total, "escapes": escapes}


def is_complete(K: KuranishiCategory, density: float = GRID_DENSITY) -> tuple[bool, dict]:
    proper, diag = is_proper(K, density)
    tropical_ok = all(polytope_is_complete(K[c].chart.polytope) for c in K.order)
    diag = dict(diag, tropical_parts_complete=tropical_ok)
    return proper and tropical_ok, diag


# ---------------------------------------------------------------------------
# cutoffs and metrics

class CutoffFamily:
    """Functions rho_i with values in [-1, 1], one per chart, plus K_eps / K_C tests."""

    def __init__(self, K: KuranishiCategory, funcs: dict, cores: dict, margins: dict, eps: float = 0.05):
        self.K = K
        self.funcs = funcs
        self.cores = cores
        self.margins = margins
        self.eps = eps

    def rho(self, i: str, on: str, Y, vertex=()) -> np.ndarray:
        """rho_i at points ``Y`` of chart ``on`` (-1 where chart i does not reach)."""
        Y = np.atleast_2d(Y)
        X, mask = self.K.transport(i, on, Y, vertex)
        out = np.full(len(Y), -1.0)
        if mask.any():
            out[mask] = self.funcs[i](X[mask], vertex)
        return out

    def all_rho(self, on: str, Y, vertex=()) -> np.ndarray:
        return np.stack([self.rho(i, on, Y, vertex) for i in self.K.order], axis=1)

    def max_rho(self, on: str, Y, vertex=()) -> np.ndarray:
        return self.all_rho(on, Y, vertex).max(axis=1)

    def in_K_eps(self, on: str, Y, vertex=()) -> np.ndarray:
        return self.max_rho(on, Y, vertex) > self.eps

    def in_K_C(self, on: str, Y, vertex=(), tol: float = 1e-8) -> np.ndarray:
        Y = np.atleast_2d(Y)
        R = self.all_rho(on, Y, vertex)
        ok = R.max(axis=1) >= 0.5
        chart = self.K[on]
        db = chart.dbar_values(Y, vertex)
        for col, j in enumerate(self.K.order):
            if j == on or self.K[j].rank >= chart.rank:
                continue
            pos = R[:, col] > 0
            if not pos.any():
                continue
            E = self.K.vmap_between(j, on)
            P = E @ np.linalg.pinv(E)
            resid = np.linalg.norm(db[pos] - db[pos] @ P.T, axis=1)
            ok[np.nonzero(pos)[0][resid > tol * max(1.0, chart.scale)]] = False
        return ok

    def to_json(self) -> dict:
        return {"eps": self.eps, "margins": {k: float(v) for k, v in sorted(self.margins.items())},
                "core_sizes": {k: int(sum(len(x) for x in c.values() if isinstance(x, np.ndarray)))
                               if isinstance(c, dict) else 0 for k, c in sorted(self.cores.items())}}


def _ramp(dist: np.ndarray, margin: float) -> np.ndarray:
    r = 1.0 - 2.0 * dist / margin
    t = np.clip((r + 1.0) / 2.0, 0.0, 1.0)
    smooth = t * t * t * (t * (6.0 * t - 15.0) + 10.0)  # C2 quintic spline
    return -1.0 + 2.0 * smooth


def choose_cutoffs(K: KuranishiCategory, density: float = GRID_DENSITY, margin: float | dict | None = None,
                   core_regions: dict | None = None, eps: float = 0.05) -> CutoffFamily:
    """Distance-based cutoffs around sampled holomorphic points.

    ``core_regions`` optionally replaces the sampled core of a chart by a
    region (used where the holomorphic locus is not on a vertex stratum).
    """
    hol = hol_sample(K, density)
    core_regions = core_regions or {}
    funcs, cores, margins = {}, {}, {}
    for cid in K.order:
        c = K[cid]
        if isinstance(margin, dict):
            mg = margin.get(cid)
        else:
            mg = margin
        if mg is None:
            # the narrowest piece sets the scale, so thin unions still get a usable ramp
            ext = []
            for pc in c.F.pieces:
                lo, hi = pc.bounds()
                ext.append(np.min(np.where(np.isfinite(hi - lo), hi - lo, np.inf)))
            mg = 0.25 * float(min(ext))
        margins[cid] = mg
        if cid in core_regions:
            reg = core_regions[cid]
            cores[cid] = reg
            funcs[cid] = (lambda reg, mg, c: lambda X, v=(): _core_ramp(reg, c, X, v, mg))(reg, mg, c)
            _check_support(c, funcs[cid], cid)
            continue
        per = {}
        for v, X in hol[cid].items():
            if len(X) == 0:
                per[v] = X
                continue
            deep = c.U.depth(c.box(X)) > 0.55 * mg
            deep &= c.F.depth(c.box(X)) > 0
            per[v] = X[deep]
        cores[cid] = per
        periodic = c.periodic

        def f(X, v=(), per=per, mg=mg, periodic=periodic):
            X = np.atleast_2d(X)
            pts = per.get(v, np.zeros((0, X.shape[1])))
            if len(pts) == 0:
                return np.full(len(X), -1.0)
            return _ramp(nearest_distance(pts, X, periodic), mg)

        funcs[cid] = f
        _check_support(c, f, cid)
    fam = CutoffFamily(K, funcs, cores, margins, eps)
    # every sampled holomorphic point needs some rho > 1/2
    for cid, per in hol.items():
        for v, X in per.items():
            if not len(X):
                continue
            inside = K[cid].F.contains(K[cid].box(X))
            if inside.any() and np.any(fam.max_rho(cid, X[inside], v) <= 0.5):
                raise VFCError("CANNOT_COVER", "a holomorphic point has no cutoff above 1/2", chart=cid)
    return fam


def _core_ramp(reg, c: KChart, X, v, mg):
    """Ramp around a core region; ``reg`` may be a dict keyed by vertex."""
    X = np.atleast_2d(X)
    if isinstance(reg, dict):
        reg = reg.get(tuple(v))
        if reg is None:
            return np.full(len(X), -1.0)
    return _ramp(np.maximum(-reg.depth(c.box(X)), 0.0), mg)


def _check_support(c: KChart, f, cid):
    for v in c.strata():
        X = c.grid("F#", v, density=GRID_DENSITY / 2, max_points=20_000)
        if len(X) == 0:
            continue
        pos = f(X, v) >= 0
        if np.any(pos & ~c.in_region("U", X)):
            raise VFCError("CANNOT_COVER", "{rho >= 0} leaves the bundle domain U", chart=cid)


class Metric:
    """Hermitian metric on each V_i, given by ``hermitian(chart, X, v) -> (P, d, d)``."""

    def __init__(self, hermitian: Callable, scales: dict | None = None, description: str = ""):
        self.hermitian = hermitian
        self.scales = scales or {}
        self.description = description

    def norm(self, chart: str, X, vals: np.ndarray, vertex=()) -> np.ndarray:
        H = self.hermitian(chart, np.atleast_2d(X), vertex)
        q = np.einsum("pi,pij,pj->p", np.conj(vals), H, vals).real
        return np.sqrt(np.maximum(q, 0.0))


def constant_metric(K: KuranishiCategory, scale: float | dict) -> Metric:
    scales = {c: (scale[c] if isinstance(scale, dict) else scale) for c in K.order}

    def herm(chart, X, v=()):
        d = K[chart].rank
        return np.broadcast_to(scales[chart] ** 2 * np.eye(d, dtype=complex), (len(X), d, d))

    return Metric(herm, scales, "constant")


def metric_condition_holds(K: KuranishiCategory, cutoffs: CutoffFamily, metric: Metric,
                           density: float = GRID_DENSITY) -> bool:
    """{|dbar| < 1} is inside {some rho_j > 1/2} on every chart grid."""
    for cid in K.order:
        c = K[cid]
        for v in c.strata():
            X = c.grid("F", v, density=density)
            if not len(X):
                continue
            small = metric.norm(cid, X, c.dbar_values(X, v), v) < 1.0
            if small.any() and np.any(cutoffs.max_rho(cid, X[small], v) <= 0.5):
                return False
    return True


def choose_metric(K: KuranishiCategory, cutoffs: CutoffFamily, bound: float = 1.0, safety: float = 2.0,
                  density: float = GRID_DENSITY) -> Metric:
    """Single constant scale s with |v| = s |v|_std chosen from grid minima of |dbar|.

    ``bound`` > 1 asks for {|dbar| < bound} inside {some rho_j > 1/2}, as
    needed for factors of a weak product.
    """
    need = 0.0
    for cid in K.order:
        c = K[cid]
        for v in c.strata():
            X = c.grid("F", v, density=density)
            if not len(X):
                continue
            bad = cutoffs.max_rho(cid, X, v) <= 0.5
            if not bad.any():
                continue
            m = float(np.min(np.linalg.norm(c.dbar_values(X[bad], v), axis=1)))
            if m <= 1e-12:
                raise VFCError("CANNOT_SCALE", "dbar vanishes where no cutoff exceeds 1/2", chart=cid)
            need = max(need, safety * bound / m)
    scale = need if need > 0 else 1.0
    metric = constant_metric(K, scale)
    probe = constant_metric(K, scale / bound)
    if not metric_condition_holds(K, cutoffs, probe, density):
        raise VFCError("CANNOT_SCALE", "grid verification of the metric condition failed")
    return metric


def product_metric(metrics: list[Metric], factor_ids: Callable, ranks: Callable) -> Metric:
    """(1/n) times the block-diagonal product of factor metrics."""
    n = len(metrics)

    def herm(chart, X, v=()):
        ids = factor_ids(chart)
        blocks = []
        start = 0
        for k, (met, cid) in enumerate(zip(metrics, ids)):
            r = ranks(k, cid)
            blocks.append(met.hermitian(cid, X, v))
            start += r
        total = sum(b.shape[1] for b in blocks)
        H = np.zeros((len(X), total, total), dtype=complex)
        pos = 0
        for b in blocks:
            H[:, pos:pos + b.shape[1], pos:pos + b.shape[1]] = b
            pos += b.shape[1]
        return H / n

    return Metric(herm, {}, f"product of {n} metrics scaled by 1/{n}")


# ---------------------------------------------------------------------------
# pullbacks along maps of the base and weak products

@dataclass(frozen=True)
class AffineBaseMap:
    """``y: Z' -> Z``, ``z' -> M z' + b``; ``region`` bounds Z' (a Region of R^{dim Z'})."""

    matrix: np.ndarray
    offset: np.ndarray
    region: Region

    def __call__(self, Zp):
        return np.atleast_2d(Zp) @ self.matrix.T + self.offset

    @property
    def source_dim(self):
        return self.matrix.shape[1]

    @property
    def target_dim(self):
        return self.matrix.shape[0]

    def compose(self, inner: "AffineBaseMap") -> "AffineBaseMap":
        return AffineBaseMap(self.matrix @ inner.matrix, self.matrix @ inner.offset + self.offset, inner.region)


def pullback_kuranishi(K: KuranishiCategory, y: AffineBaseMap) -> KuranishiCategory:
    """Fiber product of every chart with ``Z'`` over ``Z``.

    Two shapes are supported: ``y`` surjective (charts gain coordinates for
    ker y), or each chart's map to Z a coordinate projection (the selected
    coordinates are solved for in terms of ``z'``). Charts with empty
    pullback are dropped.
    """
    M = np.asarray(y.matrix, dtype=float)
    if M.shape[0] != K.base_dim:
        raise VFCError("BAD_DIM", f"map targets R^{M.shape[0]}, base is R^{K.base_dim}")
    surjective = M.shape[0] == 0 or np.linalg.matrix_rank(M) == M.shape[0]
    if surjective and M.shape[0] > 0 and any(K[c].base_coords is None for c in K.order):
        raise VFCError("NOT_SUBMERSION", "charts need coordinate maps to the base for fiber products")
    if surjective:
        return _pullback_surjective(K, y)
    if all(K[c].base_coords is not None for c in K.order):
        return _pullback_slice(K, y)
    raise VFCError("NOT_SUBMERSION", "neither the base map nor the charts' maps to the base are submersions")


def _kernel_basis(M):
    if M.shape[0] == 0:
        return np.eye(M.shape[1])
    u, s, vt = np.linalg.svd(M)
    rank = int(np.sum(s > 1e-12))
    return vt[rank:].T


def _pullback_surjective(K, y):
    """Z' = Z x ker-directions: new coordinates (x, c) with z' = M^+ (pi_Z(x) - b) + N c."""
    M = np.asarray(y.matrix, dtype=float)
    N = _kernel_basis(M)
    k = N.shape[1]
    Mp = np.linalg.pinv(M) if M.shape[0] else np.zeros((M.shape[1], 0))
    lo, hi = y.region.bounds() if y.region.dim else (np.zeros(0), np.zeros(0))
    # range of the kernel coordinates covering the Z' region
    corners = np.array(list(itertools.product(*zip(lo, hi)))) if len(lo) else np.zeros((1, 0))
    c_vals = corners @ N if len(lo) else np.zeros((1, k))
    c_lo, c_hi = c_vals.min(axis=0), c_vals.max(axis=0)
    c_region = Region.box(c_lo, c_hi) if k else Region.point()
    new_charts = []
    for cid in K.order:
        c = K[cid]
        n_new = c.chart.n + k

        def split(X, c=c):
            X = np.atleast_2d(X)
            return np.concatenate([X[:, : c.chart.n], X[:, c.chart.n + k:]], axis=1), X[:, c.chart.n: c.chart.n + k]

        new = _extend_chart(c, k, c_region, split)
        new.base_map = (lambda X, v=(), c=c, split=split: _zprime(c, split, X, v, Mp, N, y))
        new.base_coords = None
        new_charts.append(new)
    new_trans = [_extend_transition(K, t, k, c_region) for t in K.transitions]
    return KuranishiCategory(new_charts, new_trans, base_dim=y.source_dim, name=K.name + "'")


def _zprime(c, split, X, v, Mp, N, y):
    old, cc = split(X)
    z = c.base_map(old, v) if c.base_map is not None else np.zeros((len(old), 0))
    return (z - y.offset) @ Mp.T + cc @ N.T


def _extend_chart(c: KChart, k: int, c_region: Region, split) -> KChart:
    """Insert k new smooth coordinates after the existing smooth ones."""
    ch = c.chart

    def reg(r):
        # regions live in box coordinates (u, s): new coords go after u
        if r.dim == 0:
            return c_region if k else r
        pieces = []
        from .regions import Box, ProductPiece
        for p in r.pieces:
            if isinstance(p, Box) and all(isinstance(q, Box) for q in c_region.pieces):
                for q in c_region.pieces:
                    pieces.append(Box(p.lo[: ch.n] + q.lo + p.lo[ch.n:], p.hi[: ch.n] + q.hi + p.hi[ch.n:]))
            else:
                raise VFCError("NOT_SUBMERSION", "pullback of non-box regions is not supported")
        return Region(pieces, dim=r.dim + k)

    new_chart = ExplodedChart(ch.n + k, ch.m, ch.polytope, reg(c.F_sharp), ch.orientation, ch.name + "'")
    G = c.group
    elems = []
    for g in G.elements:
        A = np.eye(c.dim + k)
        idx_old = list(range(ch.n)) + list(range(ch.n + k, c.dim + k))
        A[np.ix_(idx_old, idx_old)] = g.matrix
        b = np.zeros(c.dim + k)
        b[idx_old] = g.offset
        elems.append(GroupElement(A, b, g.vrep))
    jac = None
    if c.dbar_jac is not None:
        def jac(X, v=(), c=c):
            old, _ = split(X)
            J = c.dbar_jac(old, v)
            out = np.zeros((len(old), J.shape[1], c.dim + k))
            idx_old = list(range(ch.n)) + list(range(ch.n + k, c.dim + k))
            out[:, :, idx_old] = J
            return out
    return KChart(c.id, new_chart, reg(c.F), reg(c.F_prime), c.rank,
                  lambda X, v=(), c=c: c.dbar(split(X)[0], v), FiniteGroup(elems, G.name), jac,
                  reg(c.U), None, None, c.labels)


def _extend_transition(K, t: Transition, k: int, c_region: Region) -> Transition:
    pn = t.param.n

    def lift(f, n_in, n_out):
        def g(X, v=()):
            X = np.atleast_2d(X)
            old = np.concatenate([X[:, :n_in], X[:, n_in + k:]], axis=1)
            cc = X[:, n_in:n_in + k]
            Y = np.atleast_2d(f(old, v))
            return np.concatenate([Y[:, :n_out], cc, Y[:, n_out:]], axis=1)
        return g

    ni, nj = K[t.i].chart.n, K[t.j].chart.n
    pr = t.param.region
    from .regions import Box
    pieces = [Box(p.lo[:pn] + q.lo + p.lo[pn:], p.hi[:pn] + q.hi + p.hi[pn:])
              for p in pr.pieces for q in c_region.pieces] if pr.dim else list(c_region.pieces)
    param = ExplodedChart(pn + k, t.param.m, t.param.polytope, Region(pieces, dim=pr.dim + k))
    return Transition(t.i, t.j, param, lift(t.phi_i, pn, ni), lift(t.phi_j, pn, nj),
                      lift(t.inv_i, ni, pn), lift(t.inv_j, nj, pn), t.vmap, t.small)


def _pullback_slice(K, y):
    """Charts whose map to Z is a coordinate projection: fix those coordinates to y(z')."""
    M = np.asarray(y.matrix, dtype=float)
    kept = []
    for cid in K.order:
        c = K[cid]
        if c.chart.m:
            raise VFCError("NOT_SUBMERSION", "slices of tropical charts are not supported", chart=cid)
        sel = list(c.base_coords)
        rest = [a for a in range(c.dim) if a not in sel]
        zp_dim = y.source_dim
        # new coordinates: (rest, z')
        lo, hi = c.F_sharp.bounds()
        zlo, zhi = (y.region.bounds() if zp_dim else (np.zeros(0), np.zeros(0)))
        image_lo = y(np.atleast_2d(zlo)) if zp_dim else y(np.zeros((1, 0)))
        image_hi = y(np.atleast_2d(zhi)) if zp_dim else image_lo
        lo_img = np.minimum(image_lo, image_hi)[0]
        hi_img = np.maximum(image_lo, image_hi)[0]
        if np.any(hi_img < lo[sel]) or np.any(lo_img > hi[sel]):
            continue  # empty pullback: discard this index

        def embed(Yn, c=c, sel=sel, rest=rest, zp_dim=zp_dim):
            Yn = np.atleast_2d(Yn)
            X = np.zeros((len(Yn), c.dim))
            X[:, rest] = Yn[:, : len(rest)]
            X[:, sel] = y(Yn[:, len(rest):]) if zp_dim else y(np.zeros((len(Yn), 0)))
            return X

        def restrict(r, c=c, rest=rest, zp_dim=zp_dim):
            from .regions import Box
            pieces = []
            for p in r.pieces:
                lo_p = tuple(np.array(p.lo)[rest]) + (tuple(zlo) if zp_dim else ())
                hi_p = tuple(np.array(p.hi)[rest]) + (tuple(zhi) if zp_dim else ())
                pieces.append(Box(lo_p, hi_p))
            return Region(pieces, dim=len(rest) + zp_dim)

        n_new = len(rest) + zp_dim
        ch = ExplodedChart(n_new, 0, full_space(0), restrict(c.F_sharp), c.chart.orientation, c.chart.name + "|")
        new = KChart(cid, ch, restrict(c.F), restrict(c.F_prime), c.rank,
                     lambda X, v=(), c=c, embed=embed: c.dbar(embed(X), v), None, None, restrict(c.U),
                     (lambda X, v=(), n=len(rest): np.atleast_2d(X)[:, n:]), tuple(range(len(rest), n_new)),
                     c.labels)
        kept.append(new)
    ids = {c.id for c in kept}
    trans = []
    for t in K.transitions:
        if t.i in ids and t.j in ids:
            raise VFCError("NOT_SUBMERSION", "slices of multi-chart categories need identity overlaps only")
    return KuranishiCategory(kept, trans, base_dim=y.source_dim, name=K.name + "|")


def weak_product(factors: list[KuranishiCategory], shrink: dict | None = None,
                 density: float = GRID_DENSITY) -> KuranishiCategory:
    """Product charts over all index tuples, optionally shrunk.

    ``shrink`` maps a product chart id (factor ids joined by ``"*"``) to a
    replacement triple ``(F, F', F#)`` of regions; product charts mapped to
    ``None`` are dropped. Product transitions are built where every factor
    pair is either equal or related by a transition.
    """
    shrink = shrink or {}
    charts = []
    combos = list(itertools.product(*[K.order for K in factors]))
    for combo in combos:
        cid = "*".join(combo)
        if cid in shrink and shrink[cid] is None:
            continue
        parts = [K[c] for K, c in zip(factors, combo)]
        charts.append(_product_chart(cid, parts, shrink.get(cid)))
    ids = [c.id for c in charts]
    trans = []
    for a, b in itertools.combinations(range(len(ids)), 2):
        ca, cb = ids[a].split("*"), ids[b].split("*")
        pieces = []
        ok = True
        for K, x, z in zip(factors, ca, cb):
            if x == z:
                pieces.append(("id", K[x]))
            elif K.transition(x, z) is not None:
                pieces.append(("t", K.transition(x, z), x, z))
            else:
                ok = False
                break
        if ok:
            trans.append(_product_transition(ids[a], ids[b], pieces))
    K = build_kuranishi(charts, trans, base_dim=sum(K.base_dim for K in factors),
                        name="x".join(K.name for K in factors), density=density)
    # the product holomorphic set must be covered by the (shrunk) charts
    factor_hol = [hol_sample(F, density) for F in factors]
    prod_pts = []
    for combo in combos:
        per = [fh[c] for fh, c in zip(factor_hol, combo)]
        if all(len(p.get(tuple(), np.zeros((0, 0)))) for p in per):
            grids = [p[()] for p in per]
            for pts in itertools.product(*grids):
                prod_pts.append(("*".join(combo), np.concatenate(pts)))
    for cid, x in prod_pts:
        covered = False
        if cid in K.charts:
            for other in K.order:
                X, mask = K.transport(other, cid, x[None, :])
                if mask[0] and K[other].F.contains(K[other].box(X))[0]:
                    covered = True
                    break
        # points of dropped charts are read in the coordinates of charts of the same shape
        if not covered and not any(K[o].F.contains(K[o].box(x[None, :]))[0] for o in K.order
                                   if K[o].dim == len(x)):
            raise VFCError("NOT_COVERING", "shrunk product charts miss a holomorphic point", chart=cid)
    return K


def _block_diag(mats):
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols), dtype=np.result_type(*mats))
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def _product_chart(cid: str, parts: list[KChart], shrunk) -> KChart:
    for p in parts:
        if p.chart.m:
            raise VFCError("NOT_COVERING", "weak products of tropical charts are not supported", chart=cid)
    dims = [p.dim for p in parts]
    offs = np.cumsum([0] + dims)

    def split(X):
        X = np.atleast_2d(X)
        return [X[:, offs[k]:offs[k + 1]] for k in range(len(parts))]

    def dbar(X, v=()):
        return np.concatenate([p.dbar_values(x) for p, x in zip(parts, split(X))], axis=1)

    def dbar_jac(X, v=()):
        return np.stack([_block_diag(list(blocks)) for blocks in zip(
            *[p.dbar_jacobian(x) for p, x in zip(parts, split(X))])])

    def prod_region(get):
        reg = get(parts[0])
        for p in parts[1:]:
            reg = reg.product(get(p))
        return reg

    if shrunk is not None:
        F, Fp, Fs = shrunk
    else:
        F, Fp, Fs = prod_region(lambda p: p.F), prod_region(lambda p: p.F_prime), prod_region(lambda p: p.F_sharp)
    U = prod_region(lambda p: p.U)
    orient = int(np.prod([p.chart.orientation for p in parts]))
    chart = ExplodedChart(sum(dims), 0, full_space(0), Fs, orient, cid)
    elems = []
    for gs in itertools.product(*[p.group.elements for p in parts]):
        elems.append(GroupElement(_block_diag([g.matrix for g in gs]), np.concatenate([g.offset for g in gs]),
                                  _block_diag([g.vrep for g in gs])))
    group = FiniteGroup(elems, "x".join(p.group.name for p in parts))
    base_coords = None
    if all(p.base_coords is not None for p in parts):
        base_coords = tuple(int(offs[k] + a) for k, p in enumerate(parts) for a in p.base_coords)
    base_map = None
    if all(p.base_map is not None for p in parts):
        base_map = lambda X, v=(): np.concatenate([p.base_map(x, v) for p, x in zip(parts, split(X))], axis=1)
    return KChart(cid, chart, F, Fp, sum(p.rank for p in parts), dbar, group, dbar_jac, U, base_map,
                  base_coords, tuple(p.id for p in parts))


def _product_transition(a: str, b: str, pieces) -> Transition:
    params, fa, fb, ia, ib, vm = [], [], [], [], [], []
    small_is_a = True
    for piece in pieces:
        if piece[0] == "id":
            c = piece[1]
            params.append(c.F_sharp)
            ident = lambda X, v=(): np.atleast_2d(X)
            fa.append(ident), fb.append(ident), ia.append(ident), ib.append(ident)
            vm.append(np.eye(c.rank, dtype=complex))
        else:
            _, t, x, z = piece
            params.append(t.param.region)
            fa.append(t.maps(x)[0]), fb.append(t.maps(z)[0])
            ia.append(t.maps(x)[1]), ib.append(t.maps(z)[1])
            E = t.vmap if t.vmap is not None else np.eye(1, dtype=complex)
            if t.small is not None and t.small != x:
                small_is_a = False
            vm.append(E)
    pdims = [p.dim for p in params]
    reg = params[0]
    for p in params[1:]:
        reg = reg.product(p)
    poffs = np.cumsum([0] + pdims)

    def compose(maps, in_offs):
        def f(X, v=()):
            X = np.atleast_2d(X)
            return np.concatenate([m(X[:, in_offs[k]:in_offs[k + 1]], v) for k, m in enumerate(maps)], axis=1)
        return f

    # chart-side offsets are needed for the inverses; they equal parameter offsets for identity overlaps
    param = ExplodedChart(reg.dim, 0, full_space(0), reg)
    vmap = _block_diag(vm) if any(v.shape[0] != v.shape[1] for v in vm) else None
    small = (a if small_is_a else b) if vmap is not None else None
    return Transition(a, b, param, compose(fa, poffs), compose(fb, poffs), compose(ia, poffs),
                      compose(ib, poffs), vmap, small)
