"""Rational polyhedra with open and closed facets.

Everything here is exact: coordinates are ``fractions.Fraction`` and
feasibility questions go through Fourier-Motzkin elimination, which keeps
track of strict inequalities. A polytope is a finite intersection of
half-spaces ``a.x >= b`` (or ``a.x > b`` when the constraint is strict)
with ``a`` a primitive integer vector.

The tropical completion of ``P`` at a point ``p`` is the union of rays from
``p`` that meet ``P`` in more than one point. For convex ``P`` that is the
closed tangent cone, obtained by keeping the constraints tight at ``p``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import VFCError

Constraint = tuple  # (normal: tuple[int, ...], offset: Fraction, strict: bool)


def to_fraction(value) -> Fraction:
    """Parse ints, Fractions or ``"p/q"`` strings. Floats are rejected."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise VFCError("SCHEMA", f"boolean is not a rational number: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise VFCError("SCHEMA", f"bad rational {value!r}") from exc
    raise VFCError("SCHEMA", f"expected an exact rational, got {type(value).__name__}")


def fraction_str(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _normalize(a: Sequence[Fraction], b: Fraction, strict: bool):
    """Scale ``a.x >= b`` so that ``a`` is a primitive integer vector.

    Returns ``None`` for trivially true constraints and raises INFEASIBLE for
    trivially false ones (zero normal).
    """
    a = [Fraction(x) for x in a]
    if all(x == 0 for x in a):
        ok = (0 > b) if strict else (0 >= b)
        if ok:
            return None
        raise VFCError("INFEASIBLE", "constraint 0 >= b fails")
    den = math.lcm(*(x.denominator for x in a))
    ints = [int(x * den) for x in a]
    g = math.gcd(*ints)
    scale = Fraction(den, g)
    return tuple(i // g for i in ints), b * scale, bool(strict)


def _dot(a, x) -> Fraction:
    return sum((Fraction(ai) * xi for ai, xi in zip(a, x)), Fraction(0))


def _fm_feasible(rows: list[tuple[list[Fraction], Fraction, bool]], dim: int) -> bool:
    """Exact feasibility of a mixed strict/non-strict system by Fourier-Motzkin."""
    current = []
    for a, b, s in rows:
        try:
            n = _normalize(a, b, s)
        except VFCError:
            return False
        if n is not None:
            current.append(n)
    for k in range(dim):
        pos, neg, keep = [], [], []
        for row in current:
            c = row[0][k]
            (pos if c > 0 else neg if c < 0 else keep).append(row)
        new = set(keep)
        for (ap, bp, sp), (an, bn, sn) in itertools.product(pos, neg):
            cp, cn = ap[k], -an[k]
            a = [cn * x + cp * y for x, y in zip(ap, an)]
            b = cn * bp + cp * bn
            try:
                n = _normalize(a, b, sp or sn)
            except VFCError:
                return False
            if n is not None:
                new.add(n)
        current = sorted(new)
    return True


@dataclass(frozen=True)
class Polytope:
    """Canonical H-representation; construct with :func:`polytope_from_constraints`."""

    dim: int
    constraints: tuple  # tuple of Constraint, sorted

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 0:
            raise VFCError("BAD_DIM", f"ambient dimension {self.dim!r}")

    # -- membership -------------------------------------------------------
    def contains(self, x: Sequence) -> bool:
        x = [to_fraction(v) if not isinstance(v, Fraction) else v for v in x]
        if len(x) != self.dim:
            raise VFCError("BAD_DIM", f"point of length {len(x)} in R^{self.dim}")
        for a, b, s in self.constraints:
            v = _dot(a, x)
            if (v <= b) if s else (v < b):
                return False
        return True

    def _rows(self):
        return [(list(map(Fraction, a)), b, s) for a, b, s in self.constraints]

    def closure(self) -> "Polytope":
        return Polytope(self.dim, _canonical((a, b, False) for a, b, s in self.constraints))

    def implies(self, a: Sequence[int], b: Fraction, strict: bool = False) -> bool:
        """True iff every point of self satisfies ``a.x >= b`` (or ``>``)."""
        neg = [-Fraction(x) for x in a]
        # self minus the half-space: a.x < b, i.e. -a.x > -b (or >= when testing strict)
        rows = self._rows() + [(neg, -Fraction(b), not strict)]
        return not _fm_feasible(rows, self.dim)

    def subset_of(self, other: "Polytope") -> bool:
        if other.dim != self.dim:
            raise VFCError("BAD_DIM", "dimension mismatch in containment")
        return all(self.implies(a, b, s) for a, b, s in other.constraints)

    def same_set(self, other: "Polytope") -> bool:
        return self.subset_of(other) and other.subset_of(self)

    def is_interior(self, p: Sequence[Fraction]) -> bool:
        return self.contains(p) and not active_face(self, TropicalPoint(tuple(p), self))

    def vertices(self) -> list[tuple[Fraction, ...]]:
        """Exact vertex list, sorted lexicographically."""
        m = self.dim
        if m == 0:
            return [()]
        out = set()
        cons = self.constraints
        for idx in itertools.combinations(range(len(cons)), m):
            mat = [[Fraction(x) for x in cons[i][0]] for i in idx]
            rhs = [cons[i][1] for i in idx]
            sol = _solve_exact(mat, rhs)
            if sol is not None and self.contains(sol):
                out.add(tuple(sol))
        return sorted(out)

    def to_json(self) -> dict:
        return {"dim": self.dim,
                "constraints": [{"a": list(a), "b": fraction_str(b), "strict": s}
                                for a, b, s in self.constraints]}

    def __str__(self) -> str:
        if not self.constraints:
            return f"R^{self.dim}"
        if self.dim == 1:
            return self._interval_str()
        parts = []
        for a, b, s in self.constraints:
            lhs = " + ".join(f"{c}*x{i}" for i, c in enumerate(a) if c)
            parts.append(f"{lhs} {'>' if s else '>='} {fraction_str(b)}")
        return "{" + ", ".join(parts) + "}"

    def _interval_str(self) -> str:
        # primitive normals in R^1 are +1 (lower bounds) and -1 (upper bounds)
        lo = hi = None
        for (a,), b, s in self.constraints:
            if a > 0 and (lo is None or (b, s) > lo):
                lo = (b, s)
            elif a < 0 and (hi is None or (-b, not s) < hi):
                hi = (-b, not s)
        left = "(-inf" if lo is None else ("(" if lo[1] else "[") + fraction_str(lo[0])
        right = "inf)" if hi is None else fraction_str(hi[0]) + (")" if not hi[1] else "]")
        return f"{left}, {right}"


def _solve_exact(mat: list[list[Fraction]], rhs: list[Fraction]):
    """Gauss-Jordan over Q; returns None when the square system is singular."""
    n = len(mat)
    aug = [row[:] + [r] for row, r in zip(mat, rhs)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            return None
        aug[col], aug[piv] = aug[piv], aug[col]
        pv = aug[col][col]
        aug[col] = [x / pv for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[col])]
    return [aug[r][n] for r in range(n)]


def _canonical(constraints: Iterable[Constraint]) -> tuple:
    best: dict = {}
    for a, b, s in constraints:
        n = _normalize(a, b, s)
        if n is None:
            continue
        key = (n[0], n[1])
        best[key] = best.get(key, False) or n[2]
    return tuple(sorted((a, b, s) for (a, b), s in best.items()))


def _parse_constraint(c, dim):
    if isinstance(c, dict):
        a, b, s = c.get("a"), c.get("b"), c.get("strict", False)
    else:
        a, b, *rest = c
        s = rest[0] if rest else False
    if not isinstance(a, (list, tuple)) or any(isinstance(x, bool) or not isinstance(x, int) for x in a):
        raise VFCError("SCHEMA", f"constraint normal must be a list of integers: {a!r}")
    if dim is not None and len(a) != dim:
        raise VFCError("BAD_DIM", f"normal {list(a)} has length {len(a)}, expected {dim}")
    return tuple(a), to_fraction(b), bool(s)


def polytope_from_constraints(constraints: Iterable, dim: int | None = None) -> Polytope:
    """Build a canonical, certified-nonempty polytope.

    ``constraints`` holds ``(a, b, strict)`` tuples or ``{"a","b","strict"}``
    dicts. ``dim`` is required when the list is empty.
    """
    parsed = []
    for c in constraints:
        parsed.append(_parse_constraint(c, dim))
        dim = len(parsed[-1][0]) if dim is None else dim
    if dim is None:
        raise VFCError("BAD_DIM", "ambient dimension unknown for an empty constraint list")
    cons = _canonical(parsed)
    poly = Polytope(dim, cons)
    if not _fm_feasible(poly._rows(), dim):
        raise VFCError("INFEASIBLE", f"polytope {poly} is empty")
    return poly


def polytope_from_json(obj: dict) -> Polytope:
    if not isinstance(obj, dict) or "dim" not in obj:
        raise VFCError("SCHEMA", "polytope needs 'dim' and 'constraints'")
    return polytope_from_constraints(obj.get("constraints", []), dim=obj["dim"])


def full_space(dim: int) -> Polytope:
    return Polytope(dim, ())


@dataclass(frozen=True)
class TropicalPoint:
    coords: tuple
    polytope: Polytope

    def __post_init__(self):
        coords = tuple(to_fraction(c) for c in self.coords)
        object.__setattr__(self, "coords", coords)
        if len(coords) != self.polytope.dim:
            raise VFCError("BAD_DIM", f"point {coords} not in R^{self.polytope.dim}")
        if not self.polytope.contains(coords):
            raise VFCError("NOT_MEMBER", f"point {tuple(map(fraction_str, coords))} not in {self.polytope}")


def active_face(P: Polytope, p: TropicalPoint | Sequence) -> tuple[int, ...]:
    """Indices (into ``P.constraints``) of constraints tight at ``p``."""
    if not isinstance(p, TropicalPoint):
        p = TropicalPoint(tuple(p), P)
    elif not P.contains(p.coords):
        raise VFCError("NOT_MEMBER", "point outside polytope")
    return tuple(i for i, (a, b, _) in enumerate(P.constraints) if _dot(a, p.coords) == b)


def tropical_complete_polytope(P: Polytope, p: TropicalPoint | Sequence) -> Polytope:
    """Closed tangent cone of ``P`` at ``p``."""
    act = active_face(P, p)
    return Polytope(P.dim, _canonical((P.constraints[i][0], P.constraints[i][1], False) for i in act))


def is_complete(P: Polytope) -> bool:
    """True iff ``P`` is closed, i.e. no strict facet is reached by its closure."""
    clo = P.closure()
    return all(clo.implies(a, b, True) for a, b, s in P.constraints if s)


@dataclass(frozen=True)
class IntegralAffineMap:
    """``x -> M x + c`` with an integer matrix ``M``."""

    matrix: tuple  # tuple of int tuples, shape (k, m)
    translation: tuple  # tuple of Fractions, length k

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.matrix)
        for r in rows:
            if any(isinstance(x, bool) or not isinstance(x, int) for x in r):
                raise VFCError("SCHEMA", "integral-affine maps need integer matrices")
        if len({len(r) for r in rows}) > 1:
            raise VFCError("BAD_DIM", "ragged matrix")
        trans = tuple(to_fraction(c) for c in self.translation)
        if len(trans) != len(rows):
            raise VFCError("BAD_DIM", "translation length differs from row count")
        object.__setattr__(self, "matrix", rows)
        object.__setattr__(self, "translation", trans)

    @property
    def source_dim(self) -> int:
        return len(self.matrix[0]) if self.matrix else 0

    @property
    def target_dim(self) -> int:
        return len(self.matrix)

    def __call__(self, x: Sequence) -> tuple:
        return tuple(_dot(r, x) + c for r, c in zip(self.matrix, self.translation))

    def compose(self, inner: "IntegralAffineMap") -> "IntegralAffineMap":
        """``self o inner``."""
        m = [[sum(a * inner.matrix[k][j] for k, a in enumerate(row)) for j in range(inner.source_dim)]
             for row in self.matrix]
        c = [_dot(row, inner.translation) + t for row, t in zip(self.matrix, self.translation)]
        return IntegralAffineMap(tuple(map(tuple, m)), tuple(c))

    def maps_into(self, P: Polytope, Q: Polytope) -> bool:
        if P.dim != self.source_dim or Q.dim != self.target_dim:
            raise VFCError("BAD_DIM", "map dimensions do not match polytopes")
        for a, b, s in Q.constraints:
            pulled = [sum(a[r] * self.matrix[r][j] for r in range(Q.dim)) for j in range(P.dim)]
            if all(x == 0 for x in pulled):
                v = _dot(a, self.translation)
                if (v <= b) if s else (v < b):
                    return False
                continue
            if not P.implies(pulled, b - _dot(a, self.translation), s):
                return False
        return True


def tropical_complete_map(f: IntegralAffineMap, P: Polytope, p: TropicalPoint | Sequence,
                          Q: Polytope) -> tuple[IntegralAffineMap, Polytope, Polytope]:
    """Return ``(f, P completed at p, Q completed at f(p))`` after verifying containments."""
    if not f.maps_into(P, Q):
        raise VFCError("NOT_MAPPED", f"image of {P} is not inside {Q}")
    if not isinstance(p, TropicalPoint):
        p = TropicalPoint(tuple(p), P)
    Pc = tropical_complete_polytope(P, p)
    Qc = tropical_complete_polytope(Q, f(p.coords))
    if not f.maps_into(Pc, Qc):
        raise VFCError("NOT_MAPPED", "completed map leaves the completed codomain; this is a bug")
    return f, Pc, Qc
