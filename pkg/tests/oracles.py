"""Independent reference computations used by the tests.

None of these call into the code under test beyond reading plain data
(constraint lists, sample points), so agreement is meaningful.
"""

from __future__ import annotations

import cmath
import itertools
import math
from fractions import Fraction

import numpy as np


def ray_leaves_point(constraints, p, d) -> bool:
    """True iff the ray p + t*d (t >= 0) meets the polyhedron in more than one point.

    Intersects the admissible t-interval of every constraint directly.
    """
    lowers = [(Fraction(0), True)]  # we need some t > 0
    uppers = []
    for a, b, strict in constraints:
        ad = sum(Fraction(x) * y for x, y in zip(a, d))
        ap = sum(Fraction(x) * y for x, y in zip(a, p))
        if ad == 0:
            if not (ap > b if strict else ap >= b):
                return False
        elif ad > 0:
            lowers.append(((b - ap) / ad, strict))
        else:
            uppers.append(((b - ap) / ad, strict))
    lo = max(v for v, _ in lowers)
    lo_open = any(o for v, o in lowers if v == lo)
    if not uppers:
        return True
    hi = min(v for v, _ in uppers)
    hi_open = any(o for v, o in uppers if v == hi)
    return lo < hi or (lo == hi and not lo_open and not hi_open)


def direction_grid(m: int):
    """At least 10^3 rational directions for m = 2, 3; both signs for m = 1."""
    if m == 1:
        return [(Fraction(1),), (Fraction(-1),)]
    if m == 2:
        out = []
        for k in range(1000):
            ang = 2 * math.pi * k / 1000
            out.append((Fraction(round(1000 * math.cos(ang)), 1000), Fraction(round(1000 * math.sin(ang)), 1000)))
        return out + [(Fraction(i), Fraction(j)) for i in (-1, 0, 1) for j in (-1, 0, 1) if i or j]
    return [tuple(Fraction(v) for v in vec) for vec in itertools.product(range(-6, 7), repeat=m) if any(vec)]


def winding_number(f, radius: float, n: int = 4096, center=0j) -> int:
    """Degree of f on a circle, by summing argument increments."""
    ts = np.linspace(0.0, 2 * math.pi, n + 1)
    vals = np.array([f(center + radius * cmath.exp(1j * t)) for t in ts])
    darg = np.angle(vals[1:] / vals[:-1])
    return int(round(darg.sum() / (2 * math.pi)))


def tensor_gauss(fun, lo, hi, n: int = 64, panels: int = 8):
    """Plain composite Gauss-Legendre on a box; no adaptivity."""
    x, w = np.polynomial.legendre.leggauss(n)
    dims = len(lo)
    nodes, weights = [], []
    for d in range(dims):
        edges = np.linspace(lo[d], hi[d], panels + 1)
        pts = np.concatenate([(a + b) / 2 + (b - a) / 2 * x for a, b in zip(edges[:-1], edges[1:])])
        wts = np.concatenate([(b - a) / 2 * w for a, b in zip(edges[:-1], edges[1:])])
        nodes.append(pts)
        weights.append(wts)
    grids = np.meshgrid(*nodes, indexing="ij")
    wgrid = np.ones_like(grids[0])
    for d, wg in enumerate(np.meshgrid(*weights, indexing="ij")):
        wgrid = wgrid * wg
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return float(np.sum(fun(pts) * wgrid.ravel()))
