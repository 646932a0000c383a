"""One test per acceptance criterion; each records a line for the terminal summary."""

import random
import time
from fractions import Fraction

import numpy as np

from oracles import direction_grid, ray_leaves_point
from shared import CATEGORY_SCENARIOS, context, record
from test_sheaves import K1, K1_SHARP, ORDERS, orbifold_pairs, plane_F, seed_function, seed_metric
from vfc import fixtures
from vfc.branched import ChartOpen, default_cover
from vfc.errors import VFCError
from vfc.forms import constant_form
from vfc.regions import Region
from vfc.sheaves import FunctionSheaf, MetricSheaf, global_section
from vfc.suites import adjunction, partition_independence, seed_independence, stokes, tropical_decomposition, \
    weak_product
from vfc.tropical import full_space, polytope_from_constraints, tropical_complete_polytope
from vfc.vint import integrate_vclass


def worst(reports, pick=lambda c: True):
    diffs = [c["difference"] for r in reports for c in r["checks"] if pick(c)]
    return max(diffs) if diffs else 0.0


# -- criterion 1 --------------------------------------------------------------

def random_polytope(rng: random.Random, m: int):
    """Integer constraints around an integer point p, some tight at p, some strict but slack."""
    p = tuple(Fraction(rng.randint(-2, 2)) for _ in range(m))
    cons = []
    for _ in range(rng.randint(1, 2 * m + 1)):
        a = [rng.randint(-3, 3) for _ in range(m)]
        if not any(a):
            a[rng.randrange(m)] = 1
        slack = rng.choice([0, 0, 0, 1, Fraction(1, 2), 3])
        b = sum(Fraction(x) * y for x, y in zip(a, p)) - slack
        cons.append((a, b, bool(slack) and rng.random() < 0.3))
    return polytope_from_constraints(cons), p


def test_criterion_1_tropical_completion():
    rng = random.Random(2024)
    grids = {m: direction_grid(m) for m in (1, 2, 3)}
    spent = 0.0          # time inside the code under test; the exact oracle is not counted
    failures, checked = [], 0
    for trial in range(60):
        m = 1 + trial % 3
        P, p = random_polytope(rng, m)
        t0 = time.perf_counter()
        C = tropical_complete_polytope(P, p)
        again = tropical_complete_polytope(C, p)
        points = [tuple(pi + di for pi, di in zip(p, d)) for d in grids[m]]
        inside = [C.contains(x) for x in points]
        spent += time.perf_counter() - t0
        for d, got in zip(grids[m], inside):
            if got != ray_leaves_point(P.constraints, p, d):
                failures.append((trial, d))
                break
        if again != C:
            failures.append((trial, "not idempotent"))
        checked += 1
    # interior points complete to the whole space
    for m in (1, 2, 3):
        box = polytope_from_constraints([([int(i == j) * s for j in range(m)], -1)
                                         for i in range(m) for s in (1, -1)])
        if tropical_complete_polytope(box, [Fraction(1, 3)] * m) != full_space(m):
            failures.append((m, "interior"))
    ok = not failures and checked >= 50 and spent < 10
    record("criterion 1:", ok, f"{checked} random polytopes, {len(failures)} failures, {spent:.2f} s")
    assert not failures
    assert spent < 10


# -- criterion 2 --------------------------------------------------------------

def test_criterion_2_three_chart_sheaves():
    K = fixtures.get("three_chart").K
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    P = rng.uniform([-2.2, 1.0], [2.2, 2.2], size=(2000, 2))
    exact, worst_gap = True, 0.0
    for sheaf, seed in ((FunctionSheaf(), seed_function), (MetricSheaf(), seed_metric)):
        gs = global_section(K, sheaf, seed={"plane": seed}, K1=K1, K1_sharp=K1_SHARP, seed_value=3)
        exact &= bool(np.array_equal(gs("plane", P), seed(P)))
        for cid in ORDERS:
            Y, W = orbifold_pairs(cid, rng)
            keep = plane_F(W)
            worst_gap = max(worst_gap, float(np.max(np.abs(gs(cid, Y[keep]) - gs("plane", W[keep])))))
    elapsed = time.perf_counter() - t0
    ok = exact and worst_gap <= 1e-9 and elapsed < 30
    record("criterion 2:", ok, f"seed reproduced exactly on K1: {exact}, max mismatch {worst_gap:.1e}, "
           f"{elapsed:.1f} s")
    assert exact and worst_gap <= 1e-9 and elapsed < 30


# -- criterion 3 --------------------------------------------------------------

def test_criterion_3_counts():
    want = {"z": 1.0, "z2": 2.0, "z2_orbifold": 1.0, "zbar": -1.0}
    got = {}
    for name in want:
        ctx = context(name)
        got[name] = integrate_vclass(ctx.vclass(), constant_form(ctx.chart_dim), ctx.partition())
    err = max(abs(got[n] - want[n]) for n in want)
    record("criterion 3:", err <= 1e-8, ", ".join(f"{n}={got[n]:.12g}" for n in want))
    assert err <= 1e-8


# -- criteria 4, 5, 7 over every shipped category ------------------------------

def _over_shipped(runner, tol, label, pick=lambda c: True):
    per = {}
    for name in CATEGORY_SCENARIOS:
        rep = runner(context(name))
        per[name] = (worst([rep], pick), len(rep["checks"]))
    bad = {n: d for n, (d, _) in per.items() if not d <= tol}
    total = sum(k for _, k in per.values())
    record(label, not bad, f"{len(per)} scenarios, {total} checks, worst {max(d for d, _ in per.values()):.1e}"
           + (f", failing {sorted(bad)}" if bad else ""))
    return bad


def test_criterion_4_partition_independence():
    assert not _over_shipped(partition_independence, 1e-6, "criterion 4:")


def test_criterion_5_stokes():
    assert not _over_shipped(stokes, 1e-6, "criterion 5:")


def test_criterion_7_seed_independence():
    assert not _over_shipped(seed_independence, 1e-6, "criterion 7:")


# -- criterion 6 --------------------------------------------------------------

def test_criterion_6_adjunction_and_config_independence():
    names = [n for n in CATEGORY_SCENARIOS if context(n).pi and context(n).dim_a > 0]
    adj, cfg, ran = 0.0, 0.0, []
    for name in names:
        rep = adjunction(context(name))
        if rep["status"] == "skipped":
            continue
        ran.append(name)
        adj = max(adj, worst([rep], lambda c: "independence" not in c["name"]))
        cfg = max(cfg, worst([rep], lambda c: "independence" in c["name"]))
    ok = bool(ran) and adj <= 1e-5 and cfg <= 1e-5
    record("criterion 6:", ok, f"{len(ran)} scenarios, adjunction {adj:.1e}, (W, x, e) {cfg:.1e}")
    assert ok


# -- criterion 8 --------------------------------------------------------------

def test_criterion_8_weak_product():
    rep = weak_product(context("product"))
    d = worst([rep])
    ok = rep["status"] == "pass" and d <= 1e-5
    record("criterion 8:", ok, f"max difference {d:.1e}")
    assert ok


# -- criterion 9 --------------------------------------------------------------

def test_criterion_9_tropical_decomposition():
    out = {}
    for name in ("ray", "segment"):
        rep = tropical_decomposition(context(name))
        out[name] = (worst([rep], lambda c: "pushforward" not in c["name"]),
                     worst([rep], lambda c: "pushforward" in c["name"]),
                     any("pushforward" in c["name"] for c in rep["checks"]))
    ok = all(a <= 1e-6 and b <= 1e-5 and has for a, b, has in out.values())
    record("criterion 9:", ok, ", ".join(f"{n}: integral {a:.1e}, pushforward {b:.1e}"
                                         for n, (a, b, _) in out.items()))
    assert ok


# -- criterion 10 -------------------------------------------------------------

def admissible(cover, cid, center, radius):
    """Shrink a ball until it either avoids U' or lies in U on every chart it reaches."""
    for _ in range(8):
        O = ChartOpen(cid, Region.ball(center, radius))
        try:
            cover.space(O)
            return O
        except VFCError as err:
            assert err.code == "BAD_NESTING"
        radius /= 2
    return None


def test_criterion_10_exact_branch_measures():
    rng = np.random.default_rng(5)
    checked, bad = 0, []
    for name in ("z2_orbifold", "three_chart"):
        K = fixtures.get(name).K
        cover = default_cover(K)
        for cid in K.order:
            G = K[cid].group
            # balls centred in F' that stay inside the chart domain U
            centers = K[cid].F_prime.grid(8.0, max_points=4000)
            for c in centers[rng.choice(len(centers), 15, replace=False)]:
                room = float(K[cid].U.depth(c[None, :])[0])
                big = admissible(cover, cid, c, 0.9 * room * rng.uniform(0.3, 1.0))
                if big is None:
                    continue
                small = ChartOpen(cid, Region.ball(c, big.region.pieces[0].radius / 4))
                sp = cover.space(big)
                if not all(isinstance(m, Fraction) for m in sp.measure.values()) or sp.total != 1:
                    bad.append((name, cid, "measure"))
                if not cover.check_pullback(small, big):
                    bad.append((name, cid, "restriction"))
                for g in range(G.order):
                    if not cover.check_pullback(big, big, g):
                        bad.append((name, cid, f"automorphism {g}"))
                checked += 1
        vc = context(name).vclass()
        for cid in K.order:
            ws = {}
            for c, v, b, mu, z in vc.pieces:
                if c == cid:
                    ws[v] = ws.get(v, Fraction(0)) + mu
            if any(not isinstance(w, Fraction) or w != 1 for w in ws.values()):
                bad.append((name, cid, "class weights"))
    record("criterion 10:", not bad, f"{checked} opens, identities exact in Fraction, {len(bad)} failures")
    assert not bad
