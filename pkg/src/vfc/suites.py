"""Invariance checks run by ``vfc check`` and by the test-suite.

Every suite returns a report ``{"suite", "status", "checks": [...]}`` where
each check records its left and right hand sides, the difference, the
tolerance and whether it passed. Suites that do not apply to a scenario
report ``"skipped"`` with a reason.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import VFCError
from .forms import Form, basis, constant_form, d, function_form
from .kcat import GRID_DENSITY, KuranishiCategory, choose_cutoffs, choose_metric
from .quadrature import integrate_box
from .regions import smooth_step
from .vclass import build_virtual_class
from .vint import (PushforwardConfig, build_partition, check_decomposition, integrate_vclass, product_vclass,
                   pullback_config, pushforward)

SUITES = ("partition-independence", "stokes", "adjunction", "seed-independence", "weak-product", "pullback",
          "tropical-decomposition")

DEFAULT_TOL = {"partition-independence": 1e-6, "stokes": 1e-6, "adjunction": 1e-5, "config-independence": 1e-5,
               "seed-independence": 1e-6, "weak-product": 1e-5, "pullback": 1e-5, "tropical-decomposition": 1e-6,
               "tropical-pushforward": 1e-5}

# two independent choices of chart weights (see build_partition)
PARTITION_A = (0.0, 0.5)
PARTITION_B = (0.15, 0.3)


@dataclass
class Context:
    name: str
    K: KuranishiCategory
    pi: dict = field(default_factory=dict)
    dim_a: int = 0
    core_regions: dict | None = None
    complete: bool = True
    seed: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    eps: float = 0.05
    density: float = GRID_DENSITY
    forms: dict = field(default_factory=dict)     # name -> Form (integrands)
    closed: tuple = ()                            # names of closed integrands
    factors: list = field(default_factory=list)   # Contexts of weak-product factors
    pullback: dict | None = None                  # {"base": Context, "matrix": M, "offset": b}
    tol: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def tolerance(self, key):
        return self.tol.get(key, DEFAULT_TOL[key])

    @property
    def chart_dim(self) -> int:
        return self.K[self.K.order[0]].dim

    def cutoffs(self):
        if "cut" not in self._cache:
            self._cache["cut"] = choose_cutoffs(self.K, self.density, core_regions=self.core_regions, eps=self.eps)
        return self._cache["cut"]

    def metric(self):
        if "met" not in self._cache:
            self._cache["met"] = choose_metric(self.K, self.cutoffs(), density=self.density)
        return self._cache["met"]

    def vclass(self, seed=None, force=False):
        seed = self.seed if seed is None else seed
        key = ("vc", seed, force)
        if key not in self._cache:
            self._cache[key] = build_virtual_class(self.K, self.cutoffs(), self.metric(), seed=seed, force=force,
                                                   density=self.density)
        return self._cache[key]

    def partition(self, levels=PARTITION_A):
        key = ("r", tuple(levels))
        if key not in self._cache:
            self._cache[key] = build_partition(self.K, self.cutoffs(), levels=levels, density=self.density)
        return self._cache[key]


def _check(name, lhs, rhs, tol):
    diff = float(abs(lhs - rhs))
    return {"name": name, "lhs": float(lhs), "rhs": float(rhs), "difference": diff, "tolerance": tol,
            "pass": bool(diff <= tol)}


def _report(suite, ctx, checks, status=None, note=""):
    ok = all(c["pass"] for c in checks)
    out = {"suite": suite, "status": status or ("pass" if ok else "fail"), "checks": checks,
           "seed": ctx.seed, "eps": ctx.eps, "grid_density": ctx.density}
    if note:
        out["note"] = note
    return out


def _skip(suite, ctx, why):
    return _report(suite, ctx, [], "skipped", why)


# -- test forms -------------------------------------------------------------

def random_form(dim: int, degree: int, rng: np.random.Generator, center=None, radius=None, name="random") -> Form:
    """Smooth trigonometric form; compactly supported in a ball when ``radius`` is given."""
    ncomp = len(basis(dim, degree))
    W = rng.normal(size=(ncomp, dim))
    phase = rng.uniform(0, 2 * np.pi, size=ncomp)
    amp = rng.normal(size=ncomp)
    off = rng.normal(size=ncomp)
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)

    def coeffs(X, v=()):
        X = np.atleast_2d(X)
        out = amp * np.sin(X @ W.T + phase) + off
        if radius is not None:
            bump = smooth_step(2.0 * (1.0 - np.sum((X - center) ** 2, axis=1) / radius ** 2))
            out = out * bump[:, None]
        return out
    return Form(degree, dim, coeffs, generated_by_functions=True, name=name)


def _zero_points(vc):
    pts = []
    for _, _, _, _, z in vc.pieces:
        if z.k == 0 and len(z.points):
            pts.append(z.points)
        elif z.k == 1:
            pts.extend(c.nodes for c in z.curves)
    return np.concatenate(pts) if pts else np.zeros((0, 0))


def default_integrands(ctx: Context, count: int = 3) -> dict:
    """Scenario integrands, or seeded random forms of the virtual dimension."""
    if ctx.forms:
        return ctx.forms
    k = ctx.vclass().dimension
    rng = np.random.default_rng([ctx.seed, 11])
    out = {"one": constant_form(ctx.chart_dim)} if k == 0 else {}
    for j in range(count):
        out[f"random{j}"] = random_form(ctx.chart_dim, k, rng, name=f"random{j}")
    return out


# -- suites -----------------------------------------------------------------

def partition_independence(ctx: Context) -> dict:
    vc = ctx.vclass()
    ra, rb = ctx.partition(PARTITION_A), ctx.partition(PARTITION_B)
    checks = [_check(f"integral of {name}", integrate_vclass(vc, th, ra), integrate_vclass(vc, th, rb),
                     ctx.tolerance("partition-independence"))
              for name, th in sorted(default_integrands(ctx).items())]
    return _report("partition-independence", ctx, checks)


def stokes(ctx: Context, count: int = 20) -> dict:
    vc = ctx.vclass()
    k = vc.dimension
    if k == 0:
        return _report("stokes", ctx, [], "pass",
                       "virtual dimension 0: there are no forms of degree -1, the identity is empty")
    rng = np.random.default_rng([ctx.seed, 23])
    pts = _zero_points(vc)
    r = ctx.partition()
    checks = []
    for j in range(count):
        center = pts[rng.integers(len(pts))] if len(pts) else np.zeros(ctx.chart_dim)
        theta = random_form(ctx.chart_dim, k - 1, rng, center, rng.uniform(0.4, 1.2), name=f"bump{j}")
        checks.append(_check(f"integral of d(bump{j})", integrate_vclass(vc, d(theta), r), 0.0,
                             ctx.tolerance("stokes")))
    return _report("stokes", ctx, checks)


def _integrate_on_a(form: Form, lo, hi, weight=None):
    f = (lambda Y: form.coeffs(Y)[:, 0]) if weight is None else (lambda Y: weight(Y) * form.coeffs(Y)[:, 0])
    return integrate_box(f, lo, hi, tol=1e-10, max_cells=40_000)[0]


def _a_box(ctx, vc, cfg):
    imgs = []
    for cid, v, b, mu, z in vc.pieces:
        P = z.points if z.k == 0 else (np.concatenate([c.nodes for c in z.curves]) if z.curves else np.zeros((0, 0)))
        if len(P):
            imgs.append(np.asarray(ctx.pi[cid](P, v), dtype=float).reshape(len(P), -1))
    if not imgs:
        return np.zeros(ctx.dim_a) - 1, np.zeros(ctx.dim_a) + 1
    allp = np.concatenate(imgs)
    reach = cfg.radius * max(np.linalg.norm(cfg.L(), 2), 1.0) + 0.05
    return allp.min(axis=0) - reach, allp.max(axis=0) + reach


def configs(dim_a: int):
    """Two different (W, x, e) choices on R^dim_a."""
    a = PushforwardConfig(dim_a)
    blocks = tuple(np.hstack([0.8 * np.eye(1), 0.6 * np.eye(1)]) * (1 + 0.2 * j) for j in range(dim_a))
    b = PushforwardConfig(dim_a, (1,) * dim_a, blocks, radius=0.7, power=4)
    return a, b


def adjunction(ctx: Context) -> dict:
    if not ctx.pi or ctx.dim_a == 0:
        return _skip("adjunction", ctx, "no evaluation map to a manifold A")
    vc = ctx.vclass()
    k = vc.dimension
    r = ctx.partition()
    n = ctx.chart_dim
    checks = []
    cfgs = configs(ctx.dim_a)
    one = constant_form(n)
    sides = []
    for label, cfg in zip(("config A", "config B"), cfgs):
        push1 = pushforward(vc, ctx.pi, one, cfg, r)
        lo, hi = _a_box(ctx, vc, cfg)
        if k == 0:
            # closed forms of degree 0 on A are constants
            lhs = integrate_vclass(vc, one, r)
            rhs = _integrate_on_a(push1, lo, hi)
            checks.append(_check(f"{label}: integral of 1", lhs, rhs, ctx.tolerance("adjunction")))
            sides.append(rhs)
        elif k == 1 and ctx.dim_a == 1:
            # closed 1-forms on R are h(a) da
            h = lambda Y: np.cos(Y[:, 0]) + 0.3 * Y[:, 0]
            pulled = {cid: _pulled_one_form(ctx.pi[cid], h, n) for cid in ctx.K.order}
            lhs = integrate_vclass(vc, pulled, r)
            rhs = _integrate_on_a(push1, lo, hi, weight=h)
            checks.append(_check(f"{label}: integral of pi^*(h da)", lhs, rhs, ctx.tolerance("adjunction")))
            sides.append(rhs)
        else:
            return _skip("adjunction", ctx, f"closed-form adjunction not set up for k={k}, dim A={ctx.dim_a}")
    checks.append(_check("(W, x, e) independence", sides[0], sides[1], ctx.tolerance("config-independence")))
    return _report("adjunction", ctx, checks)


def _pulled_one_form(pmap, h, n, eps=1e-6):
    def coeffs(X, v=()):
        X = np.atleast_2d(X)
        A = np.asarray(pmap(X, v), dtype=float).reshape(len(X), -1)
        grads = np.zeros((len(X), n))
        for l in range(n):
            e = np.zeros(n)
            e[l] = eps
            grads[:, l] = (np.asarray(pmap(X + e, v)) - np.asarray(pmap(X - e, v))).reshape(len(X)) / (2 * eps)
        return h(A)[:, None] * grads
    return Form(1, n, coeffs, generated_by_functions=True, name="pi^*(h da)")


def seed_independence(ctx: Context) -> dict:
    closed = {name: ctx.forms[name] for name in ctx.closed if name in ctx.forms}
    k = ctx.vclass().dimension
    if not closed:
        if k == 0:
            closed = {"one": constant_form(ctx.chart_dim)}
        else:
            rng = np.random.default_rng([ctx.seed, 31])
            closed = {"exact": d(random_form(ctx.chart_dim, k - 1, rng, name="primitive"))}
    checks = []
    for name, th in sorted(closed.items()):
        vals = []
        for s in ctx.seeds:
            vc = ctx.vclass(seed=s, force=True)
            vals.append(integrate_vclass(vc, th, ctx.partition()))
        checks.append({"name": f"spread of integral of {name} over seeds {list(ctx.seeds)}",
                       "lhs": float(max(vals)), "rhs": float(min(vals)), "values": [float(x) for x in vals],
                       "difference": float(max(vals) - min(vals)), "tolerance": ctx.tolerance("seed-independence"),
                       "pass": bool(max(vals) - min(vals) < ctx.tolerance("seed-independence"))})
    return _report("seed-independence", ctx, checks)


def weak_product(ctx: Context, samples: int = 40) -> dict:
    if len(ctx.factors) < 2:
        return _skip("weak-product", ctx, "scenario declares no product factors")
    fvcs = [f.vclass() for f in ctx.factors]
    if any(v.dimension != 0 for v in fvcs):
        return _skip("weak-product", ctx, "factor classes must be zero dimensional")
    prod = product_vclass(fvcs, ctx.K)
    r = ctx.partition()
    cfg1 = PushforwardConfig(1)
    fcfg = [PushforwardConfig(f.dim_a) for f in ctx.factors]
    cfg = PushforwardConfig(ctx.dim_a, tuple(b for c in fcfg for b in c.blocks),
                            tuple(L for c in fcfg for L in c.L_blocks), cfg1.radius, cfg1.power)
    whole = pushforward(prod, ctx.pi, constant_form(ctx.chart_dim), cfg, r)
    parts = [pushforward(v, f.pi, constant_form(f.chart_dim), c, f.partition())
             for v, f, c in zip(fvcs, ctx.factors, fcfg)]
    rng = np.random.default_rng([ctx.seed, 41])
    lo, hi = _a_box(ctx, prod, cfg)
    Y = rng.uniform(lo, hi, size=(samples, ctx.dim_a))
    lhs = whole.coeffs(Y)[:, 0]
    rhs = np.ones(len(Y))
    start = 0
    for p, f in zip(parts, ctx.factors):
        rhs = rhs * p.coeffs(Y[:, start:start + f.dim_a])[:, 0]
        start += f.dim_a
    j = int(np.argmax(np.abs(lhs - rhs)))
    checks = [_check(f"pi_!(1) of the product vs product of pi_!(1) at {samples} points", lhs[j], rhs[j],
                     ctx.tolerance("weak-product"))]
    return _report("weak-product", ctx, checks)


def pullback_square(ctx: Context, samples: int = 25) -> dict:
    if not ctx.pullback:
        return _skip("pullback", ctx, "scenario declares no base change")
    base: Context = ctx.pullback["base"]
    M = np.atleast_2d(np.asarray(ctx.pullback["matrix"], dtype=float))
    b = np.asarray(ctx.pullback["offset"], dtype=float)
    cfg = PushforwardConfig(base.dim_a)
    down = pushforward(base.vclass(), base.pi, constant_form(base.chart_dim), cfg, base.partition())
    up = pushforward(ctx.vclass(), ctx.pi, constant_form(ctx.chart_dim), pullback_config(cfg, M), ctx.partition())
    lo, hi = _a_box(ctx, ctx.vclass(), pullback_config(cfg, M))
    Y = np.random.default_rng([ctx.seed, 53]).uniform(lo, hi, size=(samples, ctx.dim_a))
    # pulling a top form back along an affine isomorphism multiplies by det M
    lhs = np.linalg.det(M) * down.coeffs(Y @ M.T + b)[:, 0]
    rhs = up.coeffs(Y)[:, 0]
    j = int(np.argmax(np.abs(lhs - rhs)))
    return _report("pullback", ctx, [_check(f"y^* pi_!(1) vs pi'_!(1) at {samples} points", lhs[j], rhs[j],
                                            ctx.tolerance("pullback"))])


def tropical_decomposition(ctx: Context) -> dict:
    if all(ctx.K[c].chart.m == 0 for c in ctx.K.order):
        note = "no tropical directions: the only tropical point is the point itself"
    else:
        note = ""
    k = ctx.vclass().dimension
    n = ctx.chart_dim
    rng = np.random.default_rng([ctx.seed, 61])
    W = rng.normal(size=n)
    theta = function_form(n, lambda X, v=(): np.cos(np.atleast_2d(X) @ W) + 0.5) if k == 0 else \
        d(random_form(n, k - 1, rng)) if k >= 1 else None
    checks = []
    for force in (False, True):
        args = None
        if ctx.pi and ctx.dim_a == 1 and k == 0:
            args = {"pi": ctx.pi, "cfg": PushforwardConfig(1)}
        rep = check_decomposition(ctx.K, theta, ctx.core_regions, ctx.seed, force, ctx.density,
                                  ctx.tolerance("tropical-decomposition"), pushforward_args=args,
                                  sample_points=np.linspace(-2.5, 2.5, 41)[:, None],
                                  push_tol=ctx.tolerance("tropical-pushforward"))
        label = "perturbed" if force else "as given"
        checks.append(_check(f"{label}: total vs sum over tropical points", rep["total"], rep["sum"],
                             rep["tolerance"]))
        checks[-1]["contributions"] = rep["contributions"]
        if "pushforward_difference" in rep:
            checks.append({"name": f"{label}: pushforward decomposition", "lhs": 0.0, "rhs": 0.0,
                           "difference": rep["pushforward_difference"], "tolerance": rep["pushforward_tolerance"],
                           "pass": rep["pushforward_pass"]})
    return _report("tropical-decomposition", ctx, checks, note=note)


def fixture_context(name: str, **options) -> Context:
    """Context for a built-in fixture, with factor and base-change data where they exist."""
    from . import fixtures
    fx = fixtures.get(name)
    ctx = Context(fx.name, fx.K, fx.pi, fx.dim_a, fx.core_regions, fx.complete, **options)
    if name == "product":
        ctx.factors = [fixture_context("z", **options), fixture_context("z2", **options)]
    if name == "pullback":
        y = fx.extra["map"]
        ctx.pullback = {"base": fixture_context("z", **options), "matrix": y.matrix, "offset": y.offset}
    return ctx


RUNNERS = {"partition-independence": partition_independence, "stokes": stokes, "adjunction": adjunction,
           "seed-independence": seed_independence, "weak-product": weak_product, "pullback": pullback_square,
           "tropical-decomposition": tropical_decomposition}


def run_suites(ctx: Context, names=None) -> list:
    names = list(names or SUITES)
    unknown = [n for n in names if n not in RUNNERS]
    if unknown:
        raise VFCError("SCHEMA", f"unknown suites {unknown}; known: {list(SUITES)}")
    return [RUNNERS[n](ctx) for n in names]
