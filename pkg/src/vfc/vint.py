"""Integration over virtual classes, pushforward along evaluation maps, Chern forms.

Orientation conventions used throughout:

* a zero point has sign ``orientation(chart) * sign det Dnu`` with ``V``
  realified as ``(Re v1, Im v1, ...)``;
* a zero curve is oriented so that ``[tangent | Dnu^+ (complex frame)]`` has
  the chart orientation;
* the total space of the pulled-back bundle is oriented zero set first,
  then ``W``; fiber integration is base first, so that
  ``int psi^* a ^ b = int_A a ^ psi_! b`` without signs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import beta as beta_fn, gamma

from .charts import tropical_complete_chart
from .errors import VFCError
from .forms import Form, basis, wedge
from .kcat import GRID_DENSITY, CutoffFamily, KChart, KuranishiCategory, choose_cutoffs, choose_metric
from .numerics import fd_jacobian
from .quadrature import gauss_rule, integrate_box
from .regions import smooth_step
from .tropical import TropicalPoint
from .vclass import Curve, VirtualClass, ZeroSet, _segment_nodes, build_virtual_class

CURVE_TOL = 1e-11
CURVE_DEPTH = 10


# ---------------------------------------------------------------------------
# partitions of unity

class PartitionOfUnity:
    """``r = r_k / (|G_k| (R + sum_l r_l))`` on chart opens ``O_k``.

    ``r_k`` are smooth weights per chart; ``R`` vanishes exactly on ``K_C``
    (where some cutoff is at least 1/2), so fiber sums equal 1 there.
    """

    def __init__(self, K: KuranishiCategory, cutoffs: CutoffFamily, weights: dict, opens: dict,
                 description: str = ""):
        self.K = K
        self.cutoffs = cutoffs
        self.weights = weights
        self.opens = opens
        self.description = description

    def _total(self, cid, X, v):
        total = np.zeros(len(X))
        for l in self.K.order:
            Xl, mask = self.K.transport(l, cid, X, v)
            if mask.any():
                total[mask] += self.weights[l](Xl[mask], v)
        return total

    def _R(self, cid, X, v):
        return np.maximum(0.5 - self.cutoffs.max_rho(cid, X, v), 0.0) ** 2

    def __call__(self, cid: str, X, vertex=()) -> np.ndarray:
        X = np.atleast_2d(X)
        rk = self.weights[cid](X, vertex)
        out = np.zeros(len(X))
        pos = rk > 0
        if pos.any():
            denom = self.K[cid].group.order * (self._R(cid, X[pos], vertex) + self._total(cid, X[pos], vertex))
            out[pos] = rk[pos] / denom
        return out

    def fiber_sum(self, cid: str, X, vertex=()) -> np.ndarray:
        """Sum of r over the fiber of the presentation over each point of chart ``cid``."""
        X = np.atleast_2d(X)
        s = np.zeros(len(X))
        for l in self.K.order:
            Xl, mask = self.K.transport(l, cid, X, vertex)
            if mask.any():
                G = self.K[l].group
                for g in G.elements:
                    s[mask] += self(l, g.act(Xl[mask]), vertex)
        return s

    def to_json(self) -> dict:
        return {"description": self.description, "opens": {k: v.to_json() for k, v in sorted(self.opens.items())}}


def build_partition(K: KuranishiCategory, cutoffs: CutoffFamily, cover=None, pinned: tuple | None = None,
                    levels: tuple = (0.0, 0.5), density: float = GRID_DENSITY) -> PartitionOfUnity:
    """Partition built from smooth chart weights.

    ``levels = (a, b)``: the weight of chart k is 1 at depth ``>= b * gap``
    inside ``F_k`` and 0 at depth ``<= a * gap``, where ``gap`` separates
    ``F_k`` from the boundary of ``F'_k``. With ``a >= 0`` supports stay in
    ``F_k``, where glued perturbations are guaranteed compatible.
    ``pinned = (chart, region)`` forces r = 1/|G| on that region of the chart
    and 0 on other charts over it.
    """
    a, b = levels
    if not (0.0 <= a < b):
        raise VFCError("SCHEMA", "partition levels must satisfy 0 <= a < b")
    eps = cutoffs.eps
    weights, opens = {}, {}
    for cid in K.order:
        c = K[cid]
        pts = c.F.grid(density, max_points=20_000)
        gap = c.F_prime.inner_depth(pts) if len(pts) else 0.1 * c.scale
        if not gap > 0:
            raise VFCError("COVER_FAIL", "F must sit strictly inside F'", chart=cid)

        def w(X, v=(), c=c, gap=gap, cid=cid):
            X = np.atleast_2d(X)
            base = c.F.level(c.box(X), a * gap, b * gap)
            pos = base > 0
            if pos.any():
                mr = cutoffs.max_rho(cid, X[pos], v)
                base[pos] *= smooth_step((mr - eps) / (0.5 - eps))
            return base

        weights[cid] = w
        opens[cid] = c.F_prime
    if pinned is not None:
        weights = _pin(K, weights, *pinned)
    part = PartitionOfUnity(K, cutoffs, weights, opens, f"levels={levels}, pinned={pinned is not None}")
    _check_cover(K, cutoffs, part, density)
    return part


def _pin(K, weights, home, region):
    c = K[home]
    lo, hi = region.bounds()
    delta = 0.1 * float(np.min(hi - lo))

    def indicator_on(cid):
        def f(X, v=()):
            Xh, mask = K.transport(home, cid, X, v)
            out = np.zeros(len(np.atleast_2d(X)))
            if mask.any():
                out[mask] = region.soft_indicator(c.box(Xh[mask]), delta)
            return out
        return f

    pinned = {}
    for cid in K.order:
        ind = indicator_on(cid)
        if cid == home:
            pinned[cid] = (lambda w, ind: lambda X, v=(): w(X, v) * (1 - ind(X, v)) + ind(X, v))(weights[cid], ind)
        else:
            pinned[cid] = (lambda w, ind: lambda X, v=(): w(X, v) * (1 - ind(X, v)))(weights[cid], ind)
    return pinned


def _check_cover(K, cutoffs, part, density):
    for cid in K.order:
        c = K[cid]
        for v in c.strata():
            X = c.grid("F", v, density=density / 2, max_points=6000)
            if not len(X):
                continue
            kc = cutoffs.max_rho(cid, X, v) >= 0.5
            if kc.any() and np.any(part._total(cid, X[kc], v) <= 0):
                raise VFCError("COVER_FAIL", "K_C leaves the supports of the partition", chart=cid)


# ---------------------------------------------------------------------------
# integration over the virtual class

def _theta_for(theta, cid):
    return theta[cid] if isinstance(theta, dict) else theta


def _check_theta(vc: VirtualClass, theta, degree: int | None = None):
    for cid in vc.K.order:
        t = _theta_for(theta, cid)
        c = vc.K[cid]
        want = vc.dimension if degree is None else degree
        if t.degree != want or t.dim != c.dim:
            raise VFCError("DEGREE_MISMATCH", f"need a {want}-form on a {c.dim}-dimensional chart",
                           chart=cid, got=t.degree)
        if c.chart.m > 0 and not (t.in_omega or t.refined):
            raise VFCError("REJECTED", "forms on tropical charts must lie in Omega", chart=cid)


def _pull_to_curve(t: Form, X, dX, vertex):
    """Coefficient of the pullback of a 1-form (or value of a 0-form) along the curve."""
    if t.degree == 0:
        return t.coeffs(X, vertex)[:, 0]
    return np.einsum("pi,pi->p", t.coeffs(X, vertex), dX)


def _integrate_curve(fun, curve: Curve, integrand, tol=CURVE_TOL, depth=CURVE_DEPTH):
    """Adaptive Gauss-Legendre along a traced curve; integrand(X, dX) per node."""
    x10, w10 = gauss_rule(10)
    x16, w16 = gauss_rule(16)
    A, B = curve.nodes[:-1], curve.nodes[1:]
    total = 0.0
    for _ in range(depth):
        X, dX, W = _segment_nodes(fun, A, B, x10, w10)
        lo = (integrand(X, dX) * W).reshape(len(A), -1).sum(axis=1)
        X, dX, W = _segment_nodes(fun, A, B, x16, w16)
        hi = (integrand(X, dX) * W).reshape(len(A), -1).sum(axis=1)
        good = np.abs(hi - lo) <= tol * max(1.0, len(curve.nodes)) / max(1, len(A)) + 1e-15
        total += float(np.sum(hi[good]))
        if good.all():
            return total
        A, B = A[~good], B[~good]
        Xm, _, _ = _segment_nodes(fun, A, B, np.array([0.5]), np.array([1.0]))
        A, B = np.concatenate([A, Xm]), np.concatenate([Xm, B])
    raise VFCError("NONCONVERGED", "curve quadrature did not converge")


def integrate_vclass(vc: VirtualClass, theta, r: PartitionOfUnity) -> float:
    """Sum over charts and branches of weight * integral of r theta over the zero set."""
    _check_theta(vc, theta)
    total = 0.0
    for cid, v, b, mu, z in vc.pieces:
        t = _theta_for(theta, cid)
        total += float(mu) * _integrate_piece(z, t, lambda X, cid=cid, v=v: r(cid, X, v), v)
    return total


def _integrate_piece(z: ZeroSet, t: Form, rfun, vertex) -> float:
    if z.k == 0:
        if not len(z.points):
            return 0.0
        return float(np.sum(z.signs * rfun(z.points) * t.coeffs(z.points, vertex)[:, 0]))
    if z.k == 1:
        return sum(_integrate_curve(z.fun, curve, lambda X, dX: rfun(X) * _pull_to_curve(t, X, dX, vertex))
                   for curve in z.curves)
    total = 0.0
    for patch in z.patches:
        def dens(U, patch=patch):
            X = patch.param(U)
            D = _param_jac(patch.param, U)
            C = t.coeffs(X, vertex)
            k = len(patch.lo)
            val = np.zeros(len(U))
            for idx, I in enumerate(basis(t.dim, t.degree)):
                val += C[:, idx] * np.linalg.det(D[:, list(I), :][:, :, :k])
            return rfun(X) * val
        total += patch.sign * integrate_box(dens, patch.lo, patch.hi, tol=1e-10)[0]
    return total


def _param_jac(param, U, h=1e-6):
    cols = []
    for a in range(U.shape[1]):
        e = np.zeros(U.shape[1])
        e[a] = h
        cols.append((param(U + e) - param(U - e)) / (2 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# pushforward

def _sphere_area(m: int) -> float:
    """Area of the unit sphere S^{m-1} in R^m."""
    return 2 * math.pi ** (m / 2) / gamma(m / 2)


@dataclass
class PushforwardConfig:
    """``W = A x R^{2 dim A}`` split in blocks; ``x(a, w) = a + L w``; radial polynomial Thom form.

    ``blocks`` lists the A-dimensions of the blocks (they sum to ``dim A``);
    block ``b`` pairs ``a_b`` coordinates of A with ``2 a_b`` fiber
    coordinates. ``L`` is block diagonal with full-rank ``a_b x 2 a_b``
    blocks. ``e = prod_b C_b (1 - |w_b|^2/R^2)^p dw``.
    """

    dim_a: int
    blocks: tuple = ()
    L_blocks: tuple = ()
    radius: float = 0.5
    power: int = 6

    def __post_init__(self):
        if not self.blocks:
            self.blocks = (self.dim_a,) if self.dim_a else ()
        if not self.L_blocks:
            self.L_blocks = tuple(np.hstack([np.eye(a), 0.5 * np.eye(a)]) for a in self.blocks)
        self.L_blocks = tuple(np.asarray(Lb, dtype=float) for Lb in self.L_blocks)
        if sum(self.blocks) != self.dim_a:
            raise VFCError("SCHEMA", "block dimensions must add up to dim A")
        for a, Lb in zip(self.blocks, self.L_blocks):
            if Lb.shape != (a, 2 * a) or np.linalg.matrix_rank(Lb) < a:
                raise VFCError("NOT_SUBMERSION", "x must be a submersion on each fiber block")
        if self.radius <= 0 or self.power < 1:
            raise VFCError("SCHEMA", "Thom form needs a positive radius and power >= 1")

    @property
    def rank(self) -> int:
        return 2 * self.dim_a

    def _block_data(self):
        out = []
        for a, Lb in zip(self.blocks, self.L_blocks):
            Lp = np.linalg.pinv(Lb)
            _, _, vt = np.linalg.svd(Lb)
            N = vt[a:].T
            n = 2 * a
            C = 2.0 / (_sphere_area(n) * self.radius ** n * beta_fn(n / 2, self.power + 1))
            out.append((a, Lb, Lp, N, C))
        return out

    def thom_density(self, w: np.ndarray) -> np.ndarray:
        """Density of e at fiber points ``w`` (P, 2 dim A)."""
        val = np.ones(len(w))
        start = 0
        for a, Lb, Lp, N, C in self._block_data():
            wb = w[:, start:start + 2 * a]
            start += 2 * a
            q = 1.0 - np.sum(wb ** 2, axis=1) / self.radius ** 2
            val *= C * np.where(q > 0, np.maximum(q, 0.0) ** self.power, 0.0)
        return val

    def L(self) -> np.ndarray:
        from .kcat import _block_diag
        return _block_diag(list(self.L_blocks)) if self.L_blocks else np.zeros((0, 0))

    def marginal(self, w0_blocks: list) -> np.ndarray:
        """Integral of e over the kernel directions through the points ``w0`` (per block).

        Each ``w0`` must be orthogonal to the kernel of its block of ``L``.
        """
        out = None
        R, p = self.radius, self.power
        for (a, Lb, Lp, N, C), w0 in zip(self._block_data(), w0_blocks):
            b2 = R * R - np.sum(w0 ** 2, axis=-1)
            pos = np.maximum(b2, 0.0)
            val = C * R ** (-2 * p) * _sphere_area(a) * pos ** (p + a / 2) * beta_fn(a / 2, p + 1) / 2
            out = val if out is None else out * val
        return out

    def to_json(self) -> dict:
        return {"dim_a": self.dim_a, "blocks": list(self.blocks), "radius": self.radius, "power": self.power,
                "L_blocks": [Lb.tolist() for Lb in self.L_blocks]}


def _nodes_for_piece(z: ZeroSet, order: int = 16):
    """(X, dX, weights) for integrating over a zero-set piece (dX None for points)."""
    if z.k == 0:
        return z.points, None, z.signs.astype(float)
    if z.k == 1:
        xs, ws = gauss_rule(order)
        Xs, dXs, Ws = [], [], []
        for curve in z.curves:
            A, B = _refined_segments(z.fun, curve)
            X, dX, W = _segment_nodes(z.fun, A, B, xs, ws)
            Xs.append(X), dXs.append(dX), Ws.append(W)
        if not Xs:
            return np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0)
        return np.concatenate(Xs), np.concatenate(dXs), np.concatenate(Ws)
    raise VFCError("DIM_UNSUPPORTED", "pushforward supports zero sets of dimension 0 and 1")


def _refined_segments(fun, curve: Curve, target: float = 0.05):
    """Split polyline segments longer than ``target`` (keeps the pushforward integrand resolved)."""
    A, B = curve.nodes[:-1], curve.nodes[1:]
    L = np.linalg.norm(B - A, axis=1)
    pieces = np.maximum(1, np.ceil(L / target).astype(int))
    As, Bs = [], []
    for a, b, m in zip(A, B, pieces):
        if m == 1:
            As.append(a[None]), Bs.append(b[None])
            continue
        sig = np.arange(1, m) / m
        mids, _, _ = _segment_nodes(fun, a[None], b[None], sig, np.ones(m - 1))
        pts = np.concatenate([a[None], mids, b[None]])
        As.append(pts[:-1]), Bs.append(pts[1:])
    return np.concatenate(As), np.concatenate(Bs)


class PushforwardForm(Form):
    """Form on A whose coefficients are fiber integrals, evaluated on demand."""

    def __init__(self, degree, dim, terms, cfg, name="pushforward"):
        self.terms = terms
        self.cfg = cfg
        super().__init__(degree, dim, self._evaluate, generated_by_functions=True, name=name)

    def _evaluate(self, Y, vertex=()):
        Y = np.atleast_2d(Y)
        out = np.zeros((len(Y), len(basis(self.dim, self.degree))))
        blocks = self.cfg._block_data()
        for piA, F in self.terms:          # piA (n,), F (n, ncomp) already weighted
            if not len(piA):
                continue
            start = 0
            w0 = []
            for a, Lb, Lp, N, C in blocks:
                diff = Y[:, None, start:start + a] - piA[None, :, start:start + a]
                w0.append(np.einsum("ij,pnj->pni", Lp, diff))
                start += a
            out += np.einsum("pn,nc->pc", self.cfg.marginal(w0), F)
        return out


def pushforward(vc: VirtualClass, pi, theta, cfg: PushforwardConfig, r: PartitionOfUnity,
                pi_jac=None) -> Form:
    """pi_!(theta) as a form on A (a number when A is a point)."""
    q = _theta_for(theta, vc.K.order[0]).degree
    _check_theta(vc, theta, q)
    k = vc.dimension
    nA = cfg.dim_a
    out_deg = q - k + nA
    if out_deg < 0 or out_deg > nA:
        raise VFCError("DEGREE_MISMATCH", f"pushforward degree {out_deg} out of range for dim A = {nA}")
    if nA == 0:
        return integrate_vclass(vc, theta, r)
    Lp = np.linalg.pinv(cfg.L())
    _, _, vt = np.linalg.svd(cfg.L())
    N = _block_kernel(cfg)
    fc = 2 * nA - nA
    rank = cfg.rank
    terms = []
    out_idx = basis(nA, out_deg)
    for cid, v, b, mu, z in vc.pieces:
        t = _theta_for(theta, cid)
        pmap = pi[cid] if isinstance(pi, dict) else pi
        X, dX, W = _nodes_for_piece(z)
        if not len(X):
            continue
        piX = np.asarray(pmap(X, v), dtype=float).reshape(len(X), nA)
        weight = float(mu) * W * r(cid, X, v)
        # pulled-back theta components along the piece
        if k == 0:
            th = {(): t.coeffs(X, v)[:, 0]}
        else:
            comps = {(): t.coeffs(X, v)[:, 0]} if q == 0 else {(0,): _pull_to_curve(t, X, dX, v)}
            th = comps
        if k == 1:
            J = pi_jac[cid](X, v) if isinstance(pi_jac, dict) else (
                pi_jac(X, v) if pi_jac is not None else fd_jacobian(lambda Y: pmap(Y, v).astype(complex), X, 1e-6)[:, 0::2])
            dpi = np.einsum("pab,pb->pa", J, dX)
        F = np.zeros((len(X), len(out_idx)))
        for p in range(len(X)):
            D = np.zeros((k + rank, nA + k + fc))
            if k:
                D[:k, nA:nA + k] = np.eye(k)
                D[k:, nA:nA + k] = -(Lp @ dpi[p])[:, None]
            D[k:, :nA] = Lp
            D[k:, nA + k:] = N
            sgn = np.sign(np.linalg.det(D))
            fiber = list(range(nA, nA + k + fc))
            for col, J_out in enumerate(out_idx):
                M = list(J_out) + fiber
                acc = 0.0
                for I, val in th.items():
                    S = list(I) + list(range(k, k + rank))
                    acc += val[p] * np.linalg.det(D[np.ix_(S, M)])
                F[p, col] = sgn * acc
        terms.append((piX, F * weight[:, None]))
    return PushforwardForm(out_deg, nA, terms, cfg)


def pullback_config(cfg: PushforwardConfig, matrix) -> PushforwardConfig:
    """Config on A' for an affine isomorphism A' -> A with linear part ``matrix``.

    ``x'(a', w) = a' + M^-1 L w`` is the pullback of ``x``, so pushforwards
    along the pulled-back map agree pointwise with pulled-back pushforwards.
    """
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    if M.shape != (cfg.dim_a, cfg.dim_a) or abs(np.linalg.det(M)) < 1e-12:
        raise VFCError("NOT_SUBMERSION", "configs pull back along affine isomorphisms only")
    L2 = np.linalg.solve(M, cfg.L())
    blocks, start, rstart = [], 0, 0
    for a in cfg.blocks:
        blk = L2[start:start + a, rstart:rstart + 2 * a]
        rest = L2[start:start + a].copy()
        rest[:, rstart:rstart + 2 * a] = 0
        if np.max(np.abs(rest), initial=0.0) > 1e-12:
            raise VFCError("NOT_SUBMERSION", "the base map mixes blocks of W")
        blocks.append(blk)
        start += a
        rstart += 2 * a
    return PushforwardConfig(cfg.dim_a, cfg.blocks, tuple(blocks), cfg.radius, cfg.power)


def _block_kernel(cfg: PushforwardConfig) -> np.ndarray:
    from .kcat import _block_diag
    return _block_diag([N for (_, _, _, N, _) in cfg._block_data()])


def thom_mass(cfg: PushforwardConfig) -> float:
    """Numerical fiber integral of e (should be 1)."""
    R = cfg.radius
    n = cfg.rank
    val, _ = integrate_box(lambda w: cfg.thom_density(w), [-R] * n, [R] * n, tol=1e-11, max_cells=200_000)
    return val


# ---------------------------------------------------------------------------
# Chern-Weil

def chern_form(connection, dim: int, rank: int, samples=None, power: int = 1, h: float = 1e-5) -> Form:
    """First Chern form tr(F) / (2 pi i) of a unitary connection (and its wedge powers).

    ``connection(X) -> (P, dim, rank, rank)`` complex: the matrix of 1-forms
    ``A = sum_l A_l dx_l``. ``samples`` are points used to test that every
    ``A_l`` is skew-Hermitian.
    """
    if samples is not None and len(samples):
        A = connection(np.atleast_2d(samples))
        if np.max(np.abs(A + np.conj(np.swapaxes(A, -1, -2))), initial=0.0) > 1e-9:
            raise VFCError("NOT_UNITARY", "connection matrices are not skew-Hermitian")

    def tr_a(X):
        return np.trace(connection(X), axis1=-2, axis2=-1)      # (P, dim)

    pairs = basis(dim, 2)

    def coeffs(X, v=()):
        X = np.atleast_2d(X)
        grads = []
        for l in range(dim):
            e = np.zeros(dim)
            e[l] = h
            grads.append((tr_a(X + e) - tr_a(X - e)) / (2 * h))   # d_l tr A_m, (P, dim)
        out = np.zeros((len(X), len(pairs)))
        for c, (l, m) in enumerate(pairs):
            out[:, c] = ((grads[l][:, m] - grads[m][:, l]) / (2j * math.pi)).real
        return out

    c1 = Form(2, dim, coeffs, d_coeffs=(lambda X, v=(): np.zeros((len(np.atleast_2d(X)), len(basis(dim, 3)))))
              if dim >= 3 else None, generated_by_functions=True, name="c1")
    out = c1
    for _ in range(power - 1):
        out = wedge(out, c1)
    return out


def direct_sum_connection(first, second, r1: int, r2: int):
    def conn(X):
        A, B = first(X), second(X)
        out = np.zeros(A.shape[:2] + (r1 + r2, r1 + r2), dtype=complex)
        out[..., :r1, :r1] = A
        out[..., r1:, r1:] = B
        return out
    return conn


# ---------------------------------------------------------------------------
# products of virtual classes

def product_vclass(classes: list, K: KuranishiCategory) -> VirtualClass:
    """Virtual class of a weak product from factor classes of dimension 0.

    Product charts are named by joining factor chart ids with ``*``;
    branches and weights multiply, zero points concatenate and signs multiply.
    """
    if any(vc.dimension != 0 for vc in classes):
        raise VFCError("DIM_UNSUPPORTED", "products are built for zero-dimensional factor classes")
    pieces = []
    for combo in itertools.product(*[vc.pieces for vc in classes]):
        cid = "*".join(p[0] for p in combo)
        if cid not in K.charts:
            continue
        mu = Fraction(1)
        for p in combo:
            mu *= p[3]
        pts_lists = [p[4].points for p in combo]
        sign_lists = [p[4].signs for p in combo]
        if any(len(x) == 0 for x in pts_lists):
            continue
        pts, signs = [], []
        for idx in itertools.product(*[range(len(x)) for x in pts_lists]):
            pts.append(np.concatenate([x[i] for x, i in zip(pts_lists, idx)]))
            signs.append(int(np.prod([s[i] for s, i in zip(sign_lists, idx)])))
        z = ZeroSet(cid, (), 0, np.array(pts), np.array(signs, dtype=int))
        pieces.append((cid, (), tuple(p[2] for p in combo), mu, z))
    return VirtualClass(K, pieces, {}, classes[0].seed, classes[0].eps, 0, True, None, 0)


# ---------------------------------------------------------------------------
# tropical completion

def tropical_points(K: KuranishiCategory) -> list:
    pts = set()
    for cid in K.order:
        pts.update(K[cid].strata())
    return sorted(pts)


def complete_kuranishi(K: KuranishiCategory, p) -> KuranishiCategory:
    """Charts completed at the tropical point ``p`` (charts not containing p are dropped)."""
    from .kcat import KuranishiCategory as KC
    charts = []
    for cid in K.order:
        c = K[cid]
        if c.chart.m == 0:
            charts.append(c)
            continue
        if len(p) != c.chart.m or not c.chart.polytope.contains(p):
            continue
        new_chart = tropical_complete_chart(c.chart, TropicalPoint(tuple(p), c.chart.polytope))
        charts.append(KChart(c.id, new_chart, c.F, c.F_prime, c.rank, c.dbar, c.group, c.dbar_jac, c.U,
                             c.base_map, c.base_coords, c.labels))
    ids = {c.id for c in charts}
    trans = [t for t in K.transitions if t.i in ids and t.j in ids]
    return KC(charts, trans, K.base_dim, K.name + f"//{tuple(str(x) for x in p)}")


def complete_vclass(vc: VirtualClass, p, cutoffs: CutoffFamily, density: float = GRID_DENSITY,
                    levels: tuple = (0.0, 0.5)):
    """The class over the completion at ``p``: same sections and zero sets on the stratum ``p``.

    Returns the completed class and a partition of unity built on the
    completed charts from the completed cutoffs.
    """
    p = tuple(p)
    Kp = complete_kuranishi(vc.K, p)
    keep = set(Kp.order)
    cut = CutoffFamily(Kp, {c: f for c, f in cutoffs.funcs.items() if c in keep},
                       {c: x for c, x in cutoffs.cores.items() if c in keep},
                       {c: x for c, x in cutoffs.margins.items() if c in keep}, cutoffs.eps)
    pieces = [pc for pc in vc.pieces if pc[0] in keep and (Kp[pc[0]].chart.m == 0 or tuple(pc[1]) == p)]
    sections = {c: s for c, s in vc.sections.items() if c in keep}
    vcp = VirtualClass(Kp, pieces, sections, vc.seed, vc.eps, vc.attempts, vc.perturbed, vc.cover, vc.dimension)
    return vcp, build_partition(Kp, cut, levels=levels, density=density)


def check_decomposition(K: KuranishiCategory, theta, core_regions=None, seed: int = 0, force: bool = False,
                        density: float = GRID_DENSITY, tol: float = 1e-6, margin=None, pushforward_args=None,
                        sample_points=None, push_tol: float = 1e-5) -> dict:
    """Compare the integral over [K] with the sum over tropical points of completed integrals.

    With ``pushforward_args = {"pi", "cfg"}`` the pushforwards are compared
    as well, at ``sample_points`` of A.
    """
    for cid in K.order:
        t = _theta_for(theta, cid)
        if not t.generated_by_functions:
            raise VFCError("REJECTED", "decomposition needs a form generated by functions")
    cut = choose_cutoffs(K, density, margin=margin, core_regions=core_regions)
    met = choose_metric(K, cut, density=density)
    vc = build_virtual_class(K, cut, met, seed=seed, force=force, density=density)
    r = build_partition(K, cut, density=density)
    total = integrate_vclass(vc, theta, r)
    parts = {}
    pushed = []
    for p in tropical_points(K):
        vcp, rp = complete_vclass(vc, p, cut, density)
        parts[",".join(str(x) for x in p)] = integrate_vclass(vcp, theta, rp)
        if pushforward_args is not None:
            pushed.append(pushforward(vcp, pushforward_args["pi"], theta, pushforward_args["cfg"], rp))
    summed = sum(parts.values())
    report = {"total": total, "contributions": parts, "sum": summed, "difference": abs(total - summed),
              "tolerance": tol, "pass": bool(abs(total - summed) <= tol), "seed": seed,
              "perturbed": vc.perturbed}
    if pushforward_args is not None:
        full = pushforward(vc, pushforward_args["pi"], theta, pushforward_args["cfg"], r)
        Y = np.atleast_2d(sample_points)
        lhs = full.coeffs(Y)
        rhs = sum(f.coeffs(Y) for f in pushed)
        diff = float(np.max(np.abs(lhs - rhs)))
        report["pushforward_difference"] = diff
        report["pushforward_tolerance"] = push_tol
        report["pushforward_pass"] = bool(diff <= push_tol)
        report["pass"] = report["pass"] and report["pushforward_pass"]
    return report
