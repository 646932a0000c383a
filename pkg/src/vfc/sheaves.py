"""Sheaves over a presentation and the inductive global-section construction.

A section on a chart is a callable ``(X, vertex) -> values`` (leading axis
over points). A sheaf handle knows how to move sections along transitions,
produce a local section, blend two sections with a weight, average over the
chart group and compare values. ``global_section`` glues chart sections by
ordered painting over a shrink schedule: chart ``j`` starts from a local
section, paints the seed and then every earlier chart's final section with
weights equal to 1 on that chart's schedule region, and is averaged over its
group. Nested schedule regions make later charts agree with earlier ones
wherever the earlier chart is fully painted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import VFCError
from .kcat import GRID_DENSITY, KuranishiCategory
from .regions import Region, smooth_step

TOL = 1e-9


def _c_complement(E: np.ndarray) -> np.ndarray:
    """Complex matrix whose rows span (image E)-perp, orthonormal."""
    big, small = E.shape
    u, s, vh = np.linalg.svd(E, full_matrices=True)
    return u[:, small:].conj().T


class SheafHandle:
    """Interface for sheaves of sections over chart regions."""

    name = "sheaf"

    def transport(self, K: KuranishiCategory, src: str, dst: str, section):
        """Section on ``dst`` obtained from ``section`` on ``src``; returns ``(Y, v) -> (vals, mask)``."""
        raise NotImplementedError

    def local_section(self, K: KuranishiCategory, chart: str, rng: np.random.Generator):
        raise NotImplementedError

    def blend(self, a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
        shape = (-1,) + (1,) * (a.ndim - 1)
        return (1.0 - w.reshape(shape)) * a + w.reshape(shape) * b

    def act(self, K: KuranishiCategory, chart: str, g, section):
        """Pull a section back along a group element."""
        raise NotImplementedError

    def average(self, K: KuranishiCategory, chart: str, section):
        G = K[chart].group
        if G.order == 1:
            return section
        pulled = [self.act(K, chart, g, section) for g in G.elements]

        def avg(X, v=()):
            return sum(p(X, v) for p in pulled) / len(pulled)
        return avg

    def discrepancy(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        diff = np.abs(a - b).reshape(len(a), -1)
        scale = 1.0 + np.abs(b).reshape(len(b), -1)
        return np.max(diff / scale, axis=1) if diff.shape[1] else np.zeros(len(a))

    def equal(self, a: np.ndarray, b: np.ndarray, tol: float = TOL) -> np.ndarray:
        return self.discrepancy(a, b) <= tol


class FunctionSheaf(SheafHandle):
    """Smooth real functions; the local section is 0."""

    name = "functions"

    def transport(self, K, src, dst, section):
        def f(Y, v=()):
            X, mask = K.transport(src, dst, Y, v)
            out = np.zeros(len(np.atleast_2d(Y)))
            if mask.any():
                out[mask] = section(X[mask], v)
            return out, mask
        return f

    def local_section(self, K, chart, rng):
        return lambda X, v=(): np.zeros(len(np.atleast_2d(X)))

    def act(self, K, chart, g, section):
        return lambda X, v=(): section(g.act(X), v)


class MetricSheaf(SheafHandle):
    """Hermitian metrics on the bundles, values ``(P, d, d)``.

    Moving a metric to a bigger bundle keeps it on the image of the smaller
    bundle and uses the standard metric on the orthogonal complement; moving
    to a smaller bundle restricts.
    """

    name = "metrics"

    def __init__(self, base_scale: float = 1.0):
        self.base_scale = base_scale

    def transport(self, K, src, dst, section):
        ds, dd = K[src].rank, K[dst].rank
        if dd >= ds:
            E = K.vmap_between(src, dst)            # V_src -> V_dst
            P = np.linalg.pinv(E)                   # V_dst -> V_src
            Q = _c_complement(E)

            def conv(H):
                return P.conj().T @ H @ P + self.base_scale ** 2 * (Q.conj().T @ Q)
        else:
            E = K.vmap_between(dst, src)            # V_dst -> V_src

            def conv(H):
                return E.conj().T @ H @ E

        def f(Y, v=()):
            X, mask = K.transport(src, dst, Y, v)
            out = np.broadcast_to(self.base_scale ** 2 * np.eye(dd, dtype=complex),
                                  (len(np.atleast_2d(Y)), dd, dd)).copy()
            if mask.any():
                out[mask] = conv(section(X[mask], v))
            return out, mask
        return f

    def local_section(self, K, chart, rng):
        d = K[chart].rank
        s = self.base_scale
        return lambda X, v=(): np.broadcast_to(s ** 2 * np.eye(d, dtype=complex),
                                               (len(np.atleast_2d(X)), d, d)).copy()

    def act(self, K, chart, g, section):
        R = g.vrep
        return lambda X, v=(): R.conj().T @ section(g.act(X), v) @ R


class PerturbationSheaf(SheafHandle):
    """Sections ``nu`` of the bundles differing from dbar by a small amount.

    Moving between charts keeps ``nu - dbar`` and maps it by the declared
    inclusion (or its pseudo-inverse when the target bundle is smaller).
    The local section is dbar plus seeded random constant sections times
    smooth bumps; the caller fixes the amplitude below the metric bound.
    """

    name = "perturbations"

    def __init__(self, amplitude: float, bumps: int = 3, support: dict | None = None):
        self.amplitude = amplitude
        self.bumps = bumps
        self.support = support or {}

    def transport(self, K, src, dst, section):
        E = K.vmap_between(src, dst)

        def f(Y, v=()):
            Y = np.atleast_2d(Y)
            X, mask = K.transport(src, dst, Y, v)
            out = K[dst].dbar_values(Y, v)
            if mask.any():
                delta = section(X[mask], v) - K[src].dbar_values(X[mask], v)
                out[mask] = out[mask] + delta @ E.T
            return out, mask
        return f

    def local_section(self, K, chart, rng):
        c = K[chart]
        cover = self.support.get(chart, c.F_prime)
        lo, hi = cover.bounds()
        delta = 0.25 * float(np.min(hi - lo))
        centers, widths, coefs = [], [], []
        # one broad bump over the support plus a few off-center ones
        for a in range(self.bumps):
            if a == 0:
                centers.append(None)
                widths.append(None)
            else:
                centers.append(lo + (hi - lo) * rng.uniform(0.3, 0.7, size=len(lo)))
                widths.append(0.35 * float(np.min(hi - lo)))
            z = rng.standard_normal(c.rank) + 1j * rng.standard_normal(c.rank)
            coefs.append(z / max(np.linalg.norm(z), 1e-12) * rng.uniform(0.5, 1.0) / (1.0 + a))
        amp = self.amplitude

        def nu(X, v=()):
            X = np.atleast_2d(X)
            B = c.box(X)
            out = c.dbar_values(X, v)
            base = cover.soft_indicator(B, delta)
            for cen, wid, z in zip(centers, widths, coefs):
                if cen is None:
                    beta = base
                else:
                    r2 = np.sum((B - cen) ** 2, axis=1) / wid ** 2
                    beta = base * smooth_step(2.0 * (1.0 - np.sqrt(r2)))
                out = out + amp * beta[:, None] * z[None, :]
            return out
        return nu

    def act(self, K, chart, g, section):
        Rinv = np.linalg.inv(g.vrep)
        return lambda X, v=(): section(g.act(X), v) @ Rinv.T


# ---------------------------------------------------------------------------

class ShrinkSchedule:
    """Nested level regions per chart: step ``j`` uses depth levels ``d_j < d_{j+1}``.

    The weight of chart ``i`` at step ``j`` is 1 at depth ``>= d_{j+1}`` in
    ``F_i#`` and 0 at depth ``<= d_j``; ``F_i`` sits at depth at least
    ``d_{N+1}`` so it is fully painted at every step.
    """

    def __init__(self, K: KuranishiCategory, inner: dict | None = None, density: float = GRID_DENSITY):
        self.K = K
        self.steps = len(K.order)
        self.levels = {}
        for cid in K.order:
            c = K[cid]
            reg = (inner or {}).get(cid, c.F)
            pts = reg.grid(density, max_points=20_000)
            D = c.F_sharp.inner_depth(pts) if len(pts) else c.F_sharp.scale * 0.1
            if not D > 0:
                raise VFCError("AXIOM_VIOLATION", "schedule needs F strictly inside F#", chart=cid)
            N = self.steps
            self.levels[cid] = [D * (j + 1) / (N + 2) for j in range(N + 2)]

    def weight(self, cid: str, step: int, X, vertex=()) -> np.ndarray:
        c = self.K[cid]
        lv = self.levels[cid]
        return c.F_sharp.level(c.box(X), lv[step], lv[step + 1])

    def check(self, density: float = GRID_DENSITY) -> bool:
        """Nesting f_{i,j+1} in f_{i,j} and F_i inside every f_{i,j}."""
        for cid in self.K.order:
            lv = self.levels[cid]
            if any(b <= a for a, b in zip(lv, lv[1:])):
                return False
            c = self.K[cid]
            pts = c.F.grid(density, max_points=10_000)
            for j in range(self.steps):
                if len(pts) and np.any(self.weight(cid, j, self._unbox(c, pts)) < 1.0):
                    return False
        return True

    @staticmethod
    def _unbox(c, B):
        """Stratum points with all angles 0 for box points (weights ignore angles)."""
        X = np.zeros((len(B), c.dim))
        n = c.chart.n
        X[:, :n] = B[:, :n]
        for j in range(c.chart.m):
            X[:, n + 2 * j] = B[:, n + j]
        return X


@dataclass
class GlobalSection:
    K: KuranishiCategory
    sheaf: SheafHandle
    sections: dict

    def __call__(self, chart: str, X, vertex=()):
        return self.sections[chart](np.atleast_2d(X), vertex)

    def max_incompatibility(self, inner: dict | None = None, density: float = GRID_DENSITY) -> float:
        """Largest sampled discrepancy between chart sections on the shrunk regions."""
        worst = 0.0
        for t in self.K.transitions:
            for a, b in ((t.i, t.j), (t.j, t.i)):
                moved = self.sheaf.transport(self.K, a, b, self.sections[a])
                c = self.K[b]
                reg_b = (inner or {}).get(b, c.F)
                reg_a = (inner or {}).get(a, self.K[a].F)
                for v in c.strata():
                    Y = c.grid("F#", v, density=density, max_points=20_000)
                    Y = Y[reg_b.contains(c.box(Y))]
                    if not len(Y):
                        continue
                    X, mask = self.K.transport(a, b, Y, v)
                    if not mask.any():
                        continue
                    mask[mask] &= reg_a.contains(self.K[a].box(X[mask]))
                    if not mask.any():
                        continue
                    vals, ok = moved(Y[mask], v)
                    here = self.sections[b](Y[mask], v)
                    worst = max(worst, float(np.max(self.sheaf.discrepancy(vals[ok], here[ok]), initial=0.0)))
        return worst


def _painted(K, S, cid, base, layers):
    """Section on chart ``cid``: ``base`` painted over by ``(weight, moved)`` layers in order."""
    def sec(X, v=()):
        X = np.atleast_2d(X)
        out = base(X, v)
        for weight, moved in layers:
            w = weight(X, v)
            hit = w > 0
            if not hit.any():
                continue
            vals, mask = moved(X[hit], v)
            w_hit = np.where(mask, w[hit], 0.0)
            out[hit] = S.blend(out[hit], vals, w_hit)
        return out
    return sec


def _moved_weight(K, schedule, src, dst, step):
    def w(Y, v=()):
        X, mask = K.transport(src, dst, Y, v)
        out = np.zeros(len(np.atleast_2d(Y)))
        if mask.any():
            out[mask] = schedule.weight(src, step, X[mask], v)
        return out
    return w


def _seed_weight(K, seed_chart, dst, K1, K1_sharp):
    pts = K1.grid(GRID_DENSITY, max_points=20_000)
    # depth is 1-Lipschitz, so the grid minimum less the cell half-diagonal bounds the depth of all of K1
    slack = K1.grid_slack(GRID_DENSITY, max_points=20_000)
    delta = K1_sharp.inner_depth(pts) - slack if len(pts) else 0.1 * K1_sharp.scale
    if not delta > 0:
        raise VFCError("AXIOM_VIOLATION", "K1 must sit strictly inside K1#", chart=seed_chart)
    c = K[seed_chart]

    def w(Y, v=()):
        X, mask = K.transport(seed_chart, dst, Y, v)
        out = np.zeros(len(np.atleast_2d(Y)))
        if mask.any():
            out[mask] = K1_sharp.soft_indicator(c.box(X[mask]), delta)
        return out
    return w


def global_section(K: KuranishiCategory, S: SheafHandle, seed: dict | None = None, K1: dict | None = None,
                   K1_sharp: dict | None = None, K2: dict | None = None, seed_value: int = 0,
                   density: float = GRID_DENSITY, verify: bool = True) -> GlobalSection:
    """Compatible sections on every chart agreeing with ``seed`` on ``K1``.

    ``seed[c]`` is a section on chart ``c`` defined on the region
    ``K1_sharp[c]``; ``K1[c]`` is the region where the output must equal it.
    ``K2[c]`` (default ``F_c``) is the region on which the output family is
    compatible. Each step is verified on grids and any failed postcondition
    raises AXIOM_VIOLATION naming the step and chart.
    """
    seed = seed or {}
    K1 = K1 or {}
    K1_sharp = K1_sharp or {}
    schedule = ShrinkSchedule(K, K2, density)
    rng = np.random.default_rng(seed_value)
    streams = {cid: np.random.default_rng(rng.integers(2 ** 63)) for cid in K.order}
    final = {}
    for step, cid in enumerate(K.order):
        layers = []
        for sc, sec in seed.items():
            layers.append((_seed_weight(K, sc, cid, K1[sc], K1_sharp.get(sc, K[sc].F_sharp)),
                           S.transport(K, sc, cid, sec)))
        for prev in K.order[:step]:
            layers.append((_moved_weight(K, schedule, prev, cid, step), S.transport(K, prev, cid, final[prev])))
        painted = _painted(K, S, cid, S.local_section(K, cid, streams[cid]), layers)
        final[cid] = _memo(S.average(K, cid, painted))
        if verify:
            _verify_step(K, S, cid, step, final, seed, K1, schedule, density)
    return GlobalSection(K, S, final)


def _memo(section, size: int = 8):
    """Cache the last few evaluations (sections are re-evaluated on the same grids)."""
    cache = []

    def sec(X, v=()):
        X = np.atleast_2d(X)
        for key_v, key_X, val in cache:
            if key_v == v and key_X.shape == X.shape and np.array_equal(key_X, X):
                return val.copy()
        val = section(X, v)
        cache.append((v, X.copy(), val))
        if len(cache) > size:
            cache.pop(0)
        return val.copy()
    return sec


def _verify_step(K, S, cid, step, final, seed, K1, schedule, density):
    c = K[cid]
    sec = final[cid]
    for v in c.strata():
        Y = c.grid("F#", v, density=density / 2, max_points=4000)
        if not len(Y):
            continue
        vals = sec(Y, v)
        # seed agreement on K1
        for sc, sd in seed.items():
            X, mask = K.transport(sc, cid, Y, v)
            if mask.any():
                mask[mask] &= K1[sc].contains(K[sc].box(X[mask]))
            if mask.any():
                moved, ok = S.transport(K, sc, cid, sd)(Y[mask], v)
                if not np.all(S.equal(vals[mask][ok], moved[ok])):
                    raise VFCError("AXIOM_VIOLATION", "output differs from the seed on K1", step=step, chart=cid)
        # agreement with earlier charts where they are fully painted
        for prev in K.order[:step]:
            w = _moved_weight(K, schedule, prev, cid, step)(Y, v)
            full = w >= 1.0
            if full.any():
                moved, ok = S.transport(K, prev, cid, final[prev])(Y[full], v)
                if not np.all(S.equal(vals[full][ok], moved[ok])):
                    raise VFCError("AXIOM_VIOLATION", "patching disagrees with an earlier chart",
                                   step=step, chart=cid, earlier=prev)
        # group invariance
        for k, g in enumerate(c.group.elements[1:], start=1):
            inside = c.in_region("F#", g.act(Y))
            pulled = S.act(K, cid, g, sec)(Y[inside], v)
            if not np.all(S.equal(pulled, vals[inside], 1e-8)):
                raise VFCError("AXIOM_VIOLATION", "averaging did not produce an invariant section",
                               step=step, chart=cid, element=k)


# ---------------------------------------------------------------------------
# function utilities

def extend_function(K: KuranishiCategory, chart: str, rho, support: dict, keep: Region | None = None,
                    density: float = GRID_DENSITY) -> GlobalSection:
    """Extend ``rho`` (given on ``F_chart#``) to all charts, 0 away from it.

    ``keep`` is where the result must equal ``rho`` (default ``F_chart``);
    ``support[c]`` is the region of chart ``c`` the support must stay in.
    """
    keep = keep if keep is not None else K[chart].F
    out = global_section(K, FunctionSheaf(), {chart: rho}, {chart: keep}, {chart: K[chart].F_sharp},
                         density=density)
    for cid in K.order:
        c = K[cid]
        O = support.get(cid)
        for v in c.strata():
            Y = c.grid("F#", v, density=density, max_points=20_000)
            if not len(Y):
                continue
            nonzero = np.abs(out(cid, Y, v)) > 0
            if nonzero.any() and (O is None or np.any(~O.contains(c.box(Y[nonzero])))):
                raise VFCError("SUPPORT_ESCAPE", "extended function leaves the allowed support", chart=cid)
    return out


def vanishing_function(K: KuranishiCategory, closed: dict):
    """Nonnegative function per chart vanishing exactly on the closed set.

    ``closed[c]`` is a Region (its closure is the set) or a callable
    ``(X, v) -> signed distance`` that is >= 0 exactly on the set. Charts
    missing from ``closed`` get the empty set (value 1).
    """
    funcs = {}
    for cid in K.order:
        C = closed.get(cid)
        if C is None:
            funcs[cid] = lambda X, v=(): np.ones(len(np.atleast_2d(X)))
        elif isinstance(C, Region):
            funcs[cid] = (lambda C, c: lambda X, v=(): np.maximum(-C.depth(c.box(X)), 0.0) ** 2)(C, K[cid])
        else:
            funcs[cid] = (lambda C: lambda X, v=(): np.maximum(-C(np.atleast_2d(X), v), 0.0) ** 2)(C)
    return funcs
