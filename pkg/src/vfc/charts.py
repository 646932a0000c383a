"""Exploded coordinate charts ``R^n x T^m_P`` at desk scale.

A point of a chart is a vertex ``v`` of the polytope ``P`` together with
smooth coordinates ``u`` in R^n and coefficients ``z`` in (C*)^m. Real
coordinates on a vertex stratum are laid out as::

    x = (u_1, ..., u_n, s_1, t_1, ..., s_m, t_m),   z_j = exp(s_j + i t_j)

so the pair ``(s_j, t_j)`` carries the complex orientation. Regions live in
the "box coordinates" ``(u, s)``; the angles ``t`` always range over a full
circle. Only vertex strata carry integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import VFCError
from .forms import Form
from .quadrature import integrate_box
from .regions import Region
from .tropical import Polytope, TropicalPoint, full_space, tropical_complete_polytope

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class StratumPoint:
    vertex: tuple
    u: tuple
    z: tuple

    def __post_init__(self):
        if any(abs(c) == 0 for c in self.z):
            raise VFCError("NOT_MEMBER", "tropical coefficients must be nonzero")

    def coordinates(self) -> np.ndarray:
        x = list(map(float, self.u))
        for c in self.z:
            x += [math.log(abs(c)), math.atan2(c.imag, c.real) % TWO_PI]
        return np.array(x)


@dataclass(frozen=True)
class ExplodedChart:
    """``n`` smooth and ``m`` tropical directions over polytope ``P``.

    ``region`` is a :class:`Region` in box coordinates ``(u, s)`` shared by all
    strata, or a dict from vertex tuples to regions.
    """

    n: int
    m: int
    polytope: Polytope
    region: object
    orientation: int = 1
    name: str = ""

    def __post_init__(self):
        if self.n < 0 or self.m < 0:
            raise VFCError("BAD_DIM", "chart dimensions must be nonnegative")
        if self.polytope.dim != self.m:
            raise VFCError("BAD_DIM", f"polytope in R^{self.polytope.dim} for m={self.m}")
        if self.orientation not in (1, -1):
            raise VFCError("SCHEMA", "orientation must be +1 or -1")
        for reg in self._regions().values():
            if reg.dim != self.n + self.m:
                raise VFCError("BAD_DIM", f"region of dimension {reg.dim}, expected {self.n + self.m}")

    @property
    def dim(self) -> int:
        """Real dimension of each vertex stratum."""
        return self.n + 2 * self.m

    def _regions(self) -> dict:
        if isinstance(self.region, dict):
            return self.region
        return {v: self.region for v in self.polytope.vertices()}

    def region_at(self, vertex=()) -> Region:
        regs = self._regions()
        if vertex not in regs:
            raise VFCError("NOT_MEMBER", f"{vertex} is not a stratum of this chart")
        return regs[vertex]

    def strata(self) -> list:
        return [v for v in self.polytope.vertices() if v in self._regions()]

    def box_coords(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        idx = list(range(self.n)) + [self.n + 2 * j for j in range(self.m)]
        return X[:, idx]

    def contains(self, X, vertex=()) -> np.ndarray:
        return self.region_at(vertex).contains(self.box_coords(X))

    def quadrature_box(self, vertex=()) -> tuple[np.ndarray, np.ndarray]:
        lo_b, hi_b = self.region_at(vertex).bounds()
        lo = np.zeros(self.dim)
        hi = np.zeros(self.dim)
        lo[: self.n], hi[: self.n] = lo_b[: self.n], hi_b[: self.n]
        for j in range(self.m):
            lo[self.n + 2 * j], hi[self.n + 2 * j] = lo_b[self.n + j], hi_b[self.n + j]
            lo[self.n + 2 * j + 1], hi[self.n + 2 * j + 1] = 0.0, TWO_PI
        return lo, hi

    def sample_grid(self, vertex=(), density: float = 17.0, angles: int = 8,
                    max_points: int = 100_000) -> np.ndarray:
        """Grid over the stratum: region grid in (u, s) times ``angles`` values of each t."""
        reg = self.region_at(vertex)
        budget = max(16, max_points // max(1, angles ** self.m))
        Y = reg.grid(density, max_points=budget)
        if self.m == 0:
            return Y
        ts = (np.arange(angles) + 0.5) * TWO_PI / angles
        tgrid = np.stack([g.ravel() for g in np.meshgrid(*([ts] * self.m), indexing="ij")], axis=1)
        out = np.zeros((len(Y) * len(tgrid), self.dim))
        rep = np.repeat(Y, len(tgrid), axis=0)
        til = np.tile(tgrid, (len(Y), 1))
        out[:, : self.n] = rep[:, : self.n]
        for j in range(self.m):
            out[:, self.n + 2 * j] = rep[:, self.n + j]
            out[:, self.n + 2 * j + 1] = til[:, j]
        return out

    def point(self, X, vertex=()) -> StratumPoint:
        X = np.asarray(X, dtype=float)
        z = tuple(complex(math.exp(X[self.n + 2 * j]) * np.exp(1j * X[self.n + 2 * j + 1]))
                  for j in range(self.m))
        return StratumPoint(tuple(vertex), tuple(X[: self.n]), z)

    def to_json(self) -> dict:
        regs = self._regions()
        if isinstance(self.region, dict):
            reg = [{"vertex": [str(c) for c in v], "region": r.to_json()} for v, r in sorted(regs.items())]
        else:
            reg = self.region.to_json()
        return {"n": self.n, "m": self.m, "polytope": self.polytope.to_json(),
                "region": reg, "orientation": self.orientation}


def manifold_chart(region: Region, orientation: int = 1, name: str = "") -> ExplodedChart:
    """An ordinary chart (m = 0) on a region of R^n."""
    return ExplodedChart(region.dim, 0, full_space(0), region, orientation, name)


def strata(chart: ExplodedChart) -> list:
    return chart.strata()


def integrate_chart(chart: ExplodedChart, theta: Form, tol: float = 1e-8, support: Region | None = None,
                    max_cells: int = 20000) -> float:
    """Sum over vertex strata of the integral of a top-degree form.

    Integration runs over the bounding box of the region (or of ``support``);
    the caller asserts that ``theta`` is compactly supported inside it.
    """
    if theta.degree != chart.dim or theta.dim != chart.dim:
        raise VFCError("DEGREE_MISMATCH", f"need a {chart.dim}-form, got degree {theta.degree}")
    if chart.m > 0 and not (theta.in_omega or theta.refined):
        raise VFCError("REJECTED", "forms integrated over tropical strata must lie in Omega")
    total = 0.0
    for v in chart.strata():
        if support is not None:
            lo, hi = _box_from_support(chart, support)
        else:
            lo, hi = chart.quadrature_box(v)

        def density(X, v=v):
            return theta.coeffs(X, v)[:, 0]

        val, _ = integrate_box(density, lo, hi, tol=tol, max_cells=max_cells, initial_splits=2)
        total += val
    return chart.orientation * total


def _box_from_support(chart, support):
    lo_b, hi_b = support.bounds()
    lo = np.zeros(chart.dim)
    hi = np.zeros(chart.dim)
    lo[: chart.n], hi[: chart.n] = lo_b[: chart.n], hi_b[: chart.n]
    for j in range(chart.m):
        lo[chart.n + 2 * j], hi[chart.n + 2 * j] = lo_b[chart.n + j], hi_b[chart.n + j]
        lo[chart.n + 2 * j + 1], hi[chart.n + 2 * j + 1] = 0.0, TWO_PI
    return lo, hi


def tropical_complete_chart(chart: ExplodedChart, p) -> ExplodedChart:
    """Chart over the completion of ``P`` at ``p`` with the same box bounds."""
    if not isinstance(p, TropicalPoint):
        p = TropicalPoint(tuple(p), chart.polytope)
    P2 = tropical_complete_polytope(chart.polytope, p)
    if isinstance(chart.region, Region):
        region = chart.region
    else:
        # the only possible vertex of a tangent cone is its apex p
        regs = chart._regions()
        region = {v: regs[v] for v in P2.vertices() if v in regs}
    return ExplodedChart(chart.n, chart.m, P2, region, chart.orientation, chart.name + f"//{_fmt(p.coords)}")


def _fmt(coords) -> str:
    return "(" + ",".join(str(Fraction(c)) for c in coords) + ")"


def complete_form(theta: Form, p=None) -> Form:
    """Extend ``theta`` to the completion at ``p``.

    Coordinates on the vertex stratum at ``p`` are unchanged by completion, so
    the same coefficient formula is used. Forms that are not generated by
    functions may leave Omega after completion and are flagged refined.
    """
    refined = theta.refined or (theta.in_omega and not theta.generated_by_functions)
    return Form(theta.degree, theta.dim, theta._coeffs, d_coeffs=theta._d_coeffs,
                in_omega=theta.in_omega, generated_by_functions=theta.generated_by_functions,
                refined=refined, name=f"{theta.name}//p", scale=theta.scale)


def check_form_flags(theta: Form, chart: ExplodedChart, samples: int = 64, tol: float = 1e-9) -> None:
    """Spot-check the alternating property and the angular-vanishing flag."""
    rng = np.random.default_rng(0)
    for v in chart.strata():
        X = chart.sample_grid(v, density=4.0, angles=3)
        if len(X) == 0:
            continue
        X = X[rng.choice(len(X), size=min(samples, len(X)), replace=False)]
        if theta.generated_by_functions and chart.m > 0:
            for j in range(chart.m):
                bad = theta.contract_check(X, chart.n + 2 * j + 1, v)
                if np.any(bad > tol):
                    raise VFCError("REJECTED", "form flagged generated_by_functions has angular components")
        if theta.degree >= 2:
            V = rng.standard_normal((len(X), theta.degree, chart.dim))
            W = V.copy()
            W[:, [0, 1]] = W[:, [1, 0]]
            if np.max(np.abs(theta(X, V, v) + theta(X, W, v))) > 1e-8:
                raise VFCError("REJECTED", "form is not alternating")
