"""Transverse perturbations of dbar, their oriented zero sets and the virtual class."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .branched import LiftedSheaf, WBCover, default_cover, lift_sheaf
from .errors import VFCError
from .kcat import GRID_DENSITY, TAU_TRANS, CutoffFamily, KChart, KuranishiCategory, Metric
from .numerics import dedupe, fd_jacobian, min_norm_newton, nearest_distance, realify, smallest_singular
from .quadrature import gauss_rule
from .sheaves import PerturbationSheaf, global_section

DEDUPE_RADIUS = 1e-6
MAX_RETRIES = 64
SEED_QUANTILE = 0.15
N_BUMPS = 3


# ---------------------------------------------------------------------------
# zero sets

@dataclass
class Curve:
    """Oriented polyline of points on a one-dimensional zero locus."""

    nodes: np.ndarray
    closed: bool


@dataclass
class Patch:
    """User-supplied parametrization of a zero-set piece of dimension >= 2."""

    param: object          # (U) -> (P, dim) chart points
    lo: np.ndarray
    hi: np.ndarray
    sign: int


@dataclass
class ZeroSet:
    chart: str
    vertex: tuple
    k: int
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    signs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    curves: list = field(default_factory=list)
    patches: list = field(default_factory=list)
    margin: float = np.inf
    fun: object = None     # the section whose zeros these are, (X) -> (P, d)

    def signed_count(self) -> int:
        return int(np.sum(self.signs)) if self.k == 0 else 0

    def to_json(self) -> dict:
        out = {"chart": self.chart, "vertex": [str(c) for c in self.vertex], "dimension": self.k,
               "transversality_margin": float(self.margin)}
        if self.k == 0:
            out["points"] = [[round(float(c), 10) for c in p] for p in self.points]
            out["signs"] = [int(s) for s in self.signs]
        elif self.k == 1:
            out["curves"] = [{"nodes": len(c.nodes), "closed": c.closed} for c in self.curves]
        else:
            out["patches"] = [{"lo": list(map(float, p.lo)), "hi": list(map(float, p.hi)), "sign": p.sign}
                              for p in self.patches]
        return out


def _jac(fun, scale):
    return lambda X: fd_jacobian(fun, X, 1e-6 * max(1.0, scale))


def orientation_sign(J: np.ndarray, tangent: np.ndarray | None = None) -> np.ndarray:
    """Sign of det [tangent frame | J^+ (complex frame)] per point."""
    Jp = np.linalg.pinv(J)                          # (P, N, 2d)
    M = Jp if tangent is None else np.concatenate([tangent[:, :, None], Jp], axis=2)
    return np.sign(np.linalg.det(M)).astype(int)


def zero_set(fun, chart: KChart, vertex=(), region=None, density: float = GRID_DENSITY,
             parametrization: list | None = None, step: float | None = None) -> ZeroSet:
    """Oriented zeros of ``fun`` (a section over ``chart``) inside ``region``.

    Dimension ``k = dim - 2 rank``: isolated points for ``k = 0``, traced
    curves for ``k = 1`` and verified user patches for ``k >= 2``.
    """
    region = region if region is not None else chart.F_prime
    k = chart.dim - 2 * chart.rank
    if k < 0:
        return ZeroSet(chart.id, vertex, k, fun=fun)
    jac = _jac(fun, chart.scale)
    inside = lambda X: region.contains(chart.box(X))
    if k >= 2:
        if parametrization is None:
            raise VFCError("DIM_UNSUPPORTED", f"{k}-dimensional zero sets need a parametrization",
                           chart=chart.id)
        return _verify_patches(fun, jac, chart, vertex, parametrization)
    tmp = _seed_grid(chart, region, vertex, density)
    if len(tmp) == 0:
        return ZeroSet(chart.id, vertex, k, np.zeros((0, chart.dim)), np.zeros(0, dtype=int), fun=fun)
    vals = np.linalg.norm(fun(tmp), axis=1)
    seeds = tmp[vals <= np.quantile(vals, SEED_QUANTILE)]
    tol = 1e-12 * max(1.0, float(np.quantile(vals, 0.5)))
    X, conv = min_norm_newton(fun, jac, seeds, tol=tol, periodic=chart.periodic if k == 0 else (),
                              max_step=0.25 * chart.scale, max_iter=80)
    X = X[conv]
    X = X[inside(X)] if len(X) else X
    if k == 0:
        if len(X):
            X = X[dedupe(X, DEDUPE_RADIUS, chart.periodic)]
            X = X[np.lexsort(X.T[::-1])]
        J = jac(X) if len(X) else np.zeros((0, 2 * chart.rank, chart.dim))
        signs = chart.chart.orientation * orientation_sign(J) if len(X) else np.zeros(0, dtype=int)
        margin = float(np.min(smallest_singular(J))) if len(X) else np.inf
        return ZeroSet(chart.id, vertex, 0, X, signs, margin=margin, fun=fun)
    h = step if step is not None else 0.04 * chart.scale
    curves, margin = _trace_all(fun, jac, X, inside, h, chart.chart.orientation, chart.periodic)
    return ZeroSet(chart.id, vertex, 1, curves=curves, margin=margin, fun=fun)


def _seed_grid(chart, region, vertex, density):
    from .charts import ExplodedChart
    tmp = ExplodedChart(chart.chart.n, chart.chart.m, chart.chart.polytope, region)
    return tmp.sample_grid(vertex, density=density, angles=12, max_points=60_000)


def _unit_tangent(J: np.ndarray, orientation: int) -> np.ndarray:
    """Oriented unit kernel vector of full-rank (P, N-1, N) Jacobians."""
    _, _, vt = np.linalg.svd(J)
    T = vt[:, -1, :]
    s = orientation_sign(J, T) * orientation
    return T * s[:, None]


def _wrapped(d: np.ndarray, periodic: tuple) -> np.ndarray:
    """Difference vector with angle components reduced to [-pi, pi)."""
    d = np.array(d, dtype=float)
    for j in periodic:
        d[..., j] = (d[..., j] + np.pi) % (2 * np.pi) - np.pi
    return d


def _trace_all(fun, jac, seeds, inside, h, orientation, periodic=()):
    curves = []
    margin = np.inf
    remaining = np.array(seeds, dtype=float)
    for j in periodic:
        remaining[:, j] %= 2 * np.pi
    while len(remaining):
        start = remaining[0]
        nodes, closed, m = _trace_one(fun, jac, start, inside, h, orientation, periodic)
        margin = min(margin, m)
        curves.append(Curve(nodes, closed))
        dist = nearest_distance(nodes, remaining, periodic)
        remaining = remaining[dist > 3 * h]
    curves.sort(key=lambda c: tuple(np.round(c.nodes[0], 6)))
    return curves, margin


def _project(fun, jac, X, tol=1e-13):
    Y, conv = min_norm_newton(fun, jac, np.atleast_2d(X), tol=tol, max_iter=30, max_step=np.inf)
    return Y, conv


def _trace_one(fun, jac, start, inside, h, orientation, periodic=(), max_steps: int = 20_000):
    def walk(x0, sign):
        pts = [x0]
        x = x0
        margin = np.inf
        for _ in range(max_steps):
            J = jac(x[None, :])
            margin = min(margin, float(smallest_singular(J)[0]))
            T = sign * _unit_tangent(J, orientation)[0]
            back_home = _wrapped(x0 - x, periodic)
            if sign > 0 and len(pts) > 3 and np.linalg.norm(back_home) < 1.5 * h and T @ back_home > 0:
                # nodes stay continuous in the angles, so the closing node may sit a period away
                pts.append(x + back_home)
                return pts, True, margin
            hh = h
            while True:
                y, ok = _project(fun, jac, x + hh * T)
                y = y[0]
                d = np.linalg.norm(y - x)
                if ok[0] and 0.5 * hh < d < 1.5 * hh:
                    break
                hh /= 2
                if hh < 1e-6 * h:
                    raise VFCError("REFINEMENT_FAILED", "curve tracing stalled")
            pts.append(y)
            x = y
            if not inside(x[None, :])[0]:
                return pts, False, margin
        raise VFCError("REFINEMENT_FAILED", "curve tracing did not terminate")

    x0, ok = _project(fun, jac, start)
    fwd, closed, m1 = walk(x0[0], 1.0)
    if closed:
        return np.array(fwd), True, m1
    back, _, m2 = walk(x0[0], -1.0)
    nodes = np.array(back[::-1] + fwd[1:])
    return nodes, False, min(m1, m2)


def _verify_patches(fun, jac, chart, vertex, parametrization):
    patches = []
    margin = np.inf
    for item in parametrization:
        param, lo, hi = item["map"], np.asarray(item["lo"], float), np.asarray(item["hi"], float)
        k = len(lo)
        axes = [np.linspace(a, b, 7)[1:-1] for a, b in zip(lo, hi)]
        U = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        X = param(U)
        if np.max(np.linalg.norm(fun(X), axis=1)) > 1e-8:
            raise VFCError("REFINEMENT_FAILED", "supplied parametrization is not on the zero set", chart=chart.id)
        J = jac(X)
        margin = min(margin, float(np.min(smallest_singular(J))))
        D = _param_jacobian(param, U)
        M = np.concatenate([D, np.linalg.pinv(J)], axis=2)
        signs = np.sign(np.linalg.det(M)) * chart.chart.orientation
        if np.any(signs != signs[0]):
            raise VFCError("REFINEMENT_FAILED", "parametrization orientation is not constant", chart=chart.id)
        patches.append(Patch(param, lo, hi, int(signs[0])))
    return ZeroSet(chart.id, vertex, len(parametrization[0]["lo"]), patches=patches, margin=margin, fun=fun)


def _param_jacobian(param, U, h=1e-6):
    cols = []
    for a in range(U.shape[1]):
        e = np.zeros(U.shape[1])
        e[a] = h
        cols.append((param(U + e) - param(U - e)) / (2 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# integration along pieces

def curve_rule(fun, curve: Curve, order: int = 12):
    """Quadrature nodes on a traced curve: points, derivative vectors, weights.

    Each polyline segment is parametrized by the chord coordinate and points
    are solved exactly on the zero set, so the rule integrates smooth
    integrands with spectral accuracy per segment.
    """
    x, w = gauss_rule(order)
    return _segment_nodes(fun, curve.nodes[:-1], curve.nodes[1:], x, w)


def _segment_nodes(fun, A, B, sig, wts):
    N = A.shape[1]
    chord = B - A
    L = np.linalg.norm(chord, axis=1)
    u = chord / L[:, None]
    P = len(A) * len(sig)
    Xa = np.repeat(A, len(sig), axis=0)
    U = np.repeat(u, len(sig), axis=0)
    Ls = np.repeat(L, len(sig))
    S = np.tile(sig, len(A))
    X = Xa + (S * Ls)[:, None] * U
    jac = _jac(fun, 1.0)
    for _ in range(40):
        F = np.concatenate([realify(fun(X)), (np.sum(U * (X - Xa), axis=1) - S * Ls)[:, None]], axis=1)
        if np.max(np.abs(F)) < 1e-13:
            break
        Jaug = np.concatenate([jac(X), U[:, None, :]], axis=1)
        X = X - np.linalg.solve(Jaug, F[:, :, None])[:, :, 0]
    Jaug = np.concatenate([jac(X), U[:, None, :]], axis=1)
    rhs = np.zeros((P, N))
    rhs[:, -1] = Ls
    dX = np.linalg.solve(Jaug, rhs[:, :, None])[:, :, 0]
    return X, dX, np.tile(wts, len(A))


# ---------------------------------------------------------------------------
# perturbations and the virtual class

@dataclass
class PerturbationSection:
    chart: str
    nu: object                 # (X, vertex) -> (P, branches, d)
    branches: int
    amplitude: float
    seed: int
    differs_in: dict           # chart id -> rank of the bundle nu - dbar lies in near {rho >= 0}

    def branch(self, b: int, vertex=()):
        return lambda X: self.nu(np.atleast_2d(X), vertex)[:, b]


@dataclass
class VirtualClass:
    K: KuranishiCategory
    pieces: list               # (chart, vertex, branch, Fraction weight, ZeroSet)
    sections: dict
    seed: int
    eps: float
    attempts: int
    perturbed: bool
    cover: WBCover | None = None
    dimension: int = 0

    def chart_counts(self) -> dict:
        """Weighted zero count of each chart divided by its group order, exactly."""
        out = {cid: Fraction(0) for cid in self.K.order}
        for cid, _, _, mu, z in self.pieces:
            out[cid] += mu * z.signed_count() / self.K[cid].group.order
        return out

    def signed_count(self) -> Fraction:
        """Exact count of a single-chart class; overlapping charts need the partition of unity instead."""
        if len(self.K.order) != 1:
            raise VFCError("DEGREE_MISMATCH", "an exact count needs a single chart; integrate 1 instead",
                           charts=list(self.K.order))
        return sum(self.chart_counts().values(), Fraction(0))

    def to_json(self) -> dict:
        return {"dimension": self.dimension, "seed": self.seed, "eps": self.eps, "attempts": self.attempts,
                "perturbed": self.perturbed,
                "pieces": [{"chart": c, "vertex": [str(x) for x in v], "branch": int(b),
                            "weight": f"{mu.numerator}/{mu.denominator}", "zeros": z.to_json()}
                           for c, v, b, mu, z in self.pieces]}


def virtual_dimension(K: KuranishiCategory) -> int:
    dims = {K[c].dim - 2 * K[c].rank for c in K.order}
    if len(dims) != 1:
        raise VFCError("DEGREE_MISMATCH", "charts disagree on the virtual dimension")
    return dims.pop()


def metric_bound(K: KuranishiCategory, metric: Metric, density: float = GRID_DENSITY / 2) -> float:
    """Largest operator norm of the metric relative to the standard one over chart grids."""
    worst = 0.0
    for cid in K.order:
        c = K[cid]
        for v in c.strata():
            X = c.grid("F#", v, density=density, max_points=4000)
            if len(X):
                H = metric.hermitian(cid, X, v)
                worst = max(worst, float(np.max(np.linalg.eigvalsh(H))))
    return np.sqrt(worst)


def _is_transverse(K, sections, density, parametrizations):
    for cid in K.order:
        c = K[cid]
        for v in c.strata():
            for b in range(sections[cid].branches):
                z = zero_set(sections[cid].branch(b, v), c, v, c.F_prime, density,
                             (parametrizations or {}).get(cid))
                if z.margin < _tau(c, sections[cid].branch(b, v), v, density):
                    return False
    return True


def _tau(c: KChart, fun, vertex, density):
    X = c.grid("F'", vertex, density=density / 2, max_points=2000)
    if not len(X):
        return TAU_TRANS
    J = fd_jacobian(fun, X, 1e-6 * max(1.0, c.scale))
    return TAU_TRANS * max(1.0, float(np.max(np.linalg.norm(J, axis=(1, 2)))))


def _dbar_sections(K):
    return {cid: PerturbationSection(cid, (lambda c: lambda X, v=(): c.dbar_values(X, v)[:, None])(K[cid]),
                                     1, 0.0, -1, {}) for cid in K.order}


def perturb(K: KuranishiCategory, metric: Metric, cutoffs: CutoffFamily, seed: int = 0,
            cover: WBCover | None = None, force: bool = False, max_retries: int = MAX_RETRIES,
            density: float = GRID_DENSITY, parametrizations: dict | None = None,
            extra_conditions: list | None = None):
    """Transverse branched perturbation of dbar on every chart.

    Returns ``(sections, attempts, perturbed)``. ``dbar`` itself is kept when
    it is already transverse (unless ``force``). Otherwise sections come from
    the global-section construction on the perturbation sheaf (lifted to the
    branched cover when some chart has a nontrivial group), retried with
    derived seeds and halved amplitude until every condition verifies.
    """
    extra_conditions = extra_conditions or []
    plain = _dbar_sections(K)
    if not force and _is_transverse(K, plain, density, parametrizations) and \
            all(cond(K, plain) for cond in extra_conditions):
        return plain, 0, False
    bound = metric_bound(K, metric)
    base_amp = 0.5 / (bound * sum(1.0 / (1 + a) for a in range(N_BUMPS)))
    branched = any(K[c].group.order > 1 for c in K.order)
    if branched and cover is None:
        cover = default_cover(K)
    for attempt in range(max_retries):
        amp = base_amp * 0.5 ** (attempt // 16)
        sub_seed = int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])
        S = PerturbationSheaf(amp, N_BUMPS)
        if branched:
            S = lift_sheaf(S, cover)
        gs = global_section(K, S, seed_value=sub_seed, density=density / 2)
        sections = {}
        for cid in K.order:
            nb = K[cid].group.order if branched else 1
            nu = gs.sections[cid] if branched else (lambda s: lambda X, v=(): s(X, v)[:, None])(gs.sections[cid])
            sections[cid] = PerturbationSection(cid, nu, nb, amp, sub_seed, {cid: K[cid].rank})
        if _conditions_hold(K, sections, metric, cutoffs, density, parametrizations) and \
                all(cond(K, sections) for cond in extra_conditions):
            return sections, attempt + 1, True
    raise VFCError("NO_TRANSVERSE_FOUND", f"no transverse perturbation after {max_retries} attempts")


def _conditions_hold(K, sections, metric, cutoffs, density, parametrizations) -> bool:
    for cid in K.order:
        c = K[cid]
        for v in c.strata():
            X = c.grid("F#", v, density=density / 2, max_points=6000)
            if not len(X):
                continue
            vals = sections[cid].nu(X, v)
            db = c.dbar_values(X, v)
            for b in range(sections[cid].branches):
                # the perturbation is small in the chosen metric
                if np.any(metric.norm(cid, X, vals[:, b] - db, v) >= 1.0):
                    return False
            # near lower-rank charts the perturbation stays in their bundle
            for j in K.order:
                if j == cid or K[j].rank >= c.rank:
                    continue
                near = cutoffs.rho(j, cid, X, v) >= 0
                if near.any():
                    E = K.vmap_between(j, cid)
                    P = E @ np.linalg.pinv(E)
                    for b in range(sections[cid].branches):
                        d = vals[near, b] - db[near]
                        if np.max(np.abs(d - d @ P.T)) > 1e-9:
                            return False
            for b in range(sections[cid].branches):
                fun = sections[cid].branch(b, v)
                z = zero_set(fun, c, v, c.F_prime, density, (parametrizations or {}).get(cid))
                if z.margin < _tau(c, fun, v, density):
                    return False
                pts = _piece_points(z)
                if len(pts) and np.any(cutoffs.max_rho(cid, pts, v) <= 0.5):
                    return False
    return True


def _piece_points(z: ZeroSet):
    if z.k == 0:
        return z.points
    if z.k == 1:
        return np.concatenate([c.nodes for c in z.curves]) if z.curves else np.zeros((0, 0))
    return np.zeros((0, 0))


def build_virtual_class(K: KuranishiCategory, cutoffs: CutoffFamily, metric: Metric, cover: WBCover | None = None,
                        seed: int = 0, force: bool = False, eps: float | None = None,
                        density: float = GRID_DENSITY, parametrizations: dict | None = None,
                        max_retries: int = MAX_RETRIES) -> VirtualClass:
    """Perturb, intersect with zero, and weight each branch by its measure."""
    k = virtual_dimension(K)
    sections, attempts, perturbed = perturb(K, metric, cutoffs, seed, cover, force, max_retries, density,
                                            parametrizations)
    branched = any(K[c].group.order > 1 for c in K.order)
    if branched and cover is None:
        cover = default_cover(K)
    pieces = []
    for cid in K.order:
        c = K[cid]
        nb = sections[cid].branches
        for v in c.strata():
            for b in range(nb):
                z = zero_set(sections[cid].branch(b, v), c, v, c.F_prime, density,
                             (parametrizations or {}).get(cid))
                pieces.append((cid, v, b, Fraction(1, nb), z))
    return VirtualClass(K, pieces, sections, seed, cutoffs.eps if eps is None else eps, attempts, perturbed,
                        cover, k)
