"""Regions of R^k as finite unions of boxes, balls and products of those.

Besides membership, regions provide a signed depth (positive inside) and a
C-infinity soft indicator that is exactly 1 at depth >= delta and exactly 0
outside. Blending weights everywhere in the package are built from these
indicators, which keeps perturbed sections smooth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import VFCError


def _psi(t):
    out = np.zeros_like(t, dtype=float)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(t) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    a = _psi(t)
    b = _psi(1.0 - t)
    return a / (a + b)


class Piece:
    dim: int

    def contains(self, Y: np.ndarray) -> np.ndarray:
        return self.depth(Y) > 0

    def depth(self, Y):  # pragma: no cover - interface
        raise NotImplementedError

    def soft(self, Y, delta):  # pragma: no cover - interface
        raise NotImplementedError

    def bounds(self):  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class Box(Piece):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        if len(lo) != len(hi):
            raise VFCError("BAD_DIM", "box corners of different length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise VFCError("SCHEMA", f"empty box {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.lo)

    def depth(self, Y):
        Y = np.atleast_2d(Y)
        lo = np.array(self.lo)
        hi = np.array(self.hi)
        inner = np.minimum(Y - lo, hi - Y)
        d_in = inner.min(axis=1) if self.dim else np.full(len(Y), np.inf)
        outside = np.maximum(np.maximum(lo - Y, Y - hi), 0.0)
        d_out = np.sqrt((np.where(np.isfinite(outside), outside, 0.0) ** 2).sum(axis=1))
        return np.where(d_in > 0, d_in, -d_out)

    def soft(self, Y, delta):
        return self.level(Y, 0.0, delta)

    def level(self, Y, a, b):
        """Smooth, 1 where every face is at distance >= b, 0 where some face is closer than a."""
        Y = np.atleast_2d(Y)
        out = np.ones(len(Y))
        for k in range(self.dim):
            if np.isfinite(self.lo[k]):
                out = out * smooth_step((Y[:, k] - self.lo[k] - a) / (b - a))
            if np.isfinite(self.hi[k]):
                out = out * smooth_step((self.hi[k] - Y[:, k] - a) / (b - a))
        return out

    def bounds(self):
        return np.array(self.lo), np.array(self.hi)

    def to_json(self):
        return {"box": {"lo": list(self.lo), "hi": list(self.hi)}}


@dataclass(frozen=True)
class Ball(Piece):
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise VFCError("SCHEMA", "ball radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    def depth(self, Y):
        Y = np.atleast_2d(Y)
        return self.radius - np.linalg.norm(Y - np.array(self.center), axis=1)

    def soft(self, Y, delta):
        return self.level(Y, 0.0, delta)

    def level(self, Y, a, b):
        return smooth_step((self.depth(Y) - a) / (b - a))

    def bounds(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def to_json(self):
        return {"ball": {"center": list(self.center), "radius": self.radius}}


@dataclass(frozen=True)
class ProductPiece(Piece):
    factors: tuple

    @property
    def dim(self):
        return sum(f.dim for f in self.factors)

    def _split(self, Y):
        Y = np.atleast_2d(Y)
        start = 0
        for f in self.factors:
            yield f, Y[:, start:start + f.dim]
            start += f.dim

    def depth(self, Y):
        return np.min(np.stack([f.depth(y) for f, y in self._split(Y)]), axis=0)

    def soft(self, Y, delta):
        return self.level(Y, 0.0, delta)

    def level(self, Y, a, b):
        out = None
        for f, y in self._split(Y):
            s = f.level(y, a, b)
            out = s if out is None else out * s
        return out

    def bounds(self):
        los, his = zip(*(f.bounds() for f in self.factors))
        return np.concatenate(los), np.concatenate(his)

    def to_json(self):
        return {"product": [f.to_json() for f in self.factors]}


class Region:
    """Finite union of pieces, all of the same dimension (possibly 0)."""

    def __init__(self, pieces: Sequence[Piece], dim: int | None = None):
        pieces = tuple(pieces)
        if dim is None:
            if not pieces:
                raise VFCError("BAD_DIM", "empty region needs an explicit dimension")
            dim = pieces[0].dim
        if any(p.dim != dim for p in pieces):
            raise VFCError("BAD_DIM", "region pieces of different dimension")
        self.pieces = pieces
        self.dim = dim

    # -- constructors -----------------------------------------------------
    @classmethod
    def box(cls, lo, hi):
        return cls([Box(tuple(lo), tuple(hi))])

    @classmethod
    def ball(cls, center, radius):
        return cls([Ball(tuple(center), radius)])

    @classmethod
    def point(cls):
        """The whole of R^0."""
        return cls([Box((), ())], dim=0)

    @classmethod
    def empty(cls, dim):
        return cls([], dim=dim)

    @classmethod
    def from_json(cls, obj, dim: int | None = None):
        if obj is None:
            return None
        if isinstance(obj, dict) and "pieces" in obj:
            items = obj["pieces"]
            dim = obj.get("dim", dim)
        elif isinstance(obj, list):
            items = obj
        else:
            items = [obj]
        pieces = [_piece_from_json(it) for it in items]
        if not pieces and dim == 0:
            return cls.point()
        return cls(pieces, dim=dim if not pieces else None)

    def to_json(self):
        return {"dim": self.dim, "pieces": [p.to_json() for p in self.pieces]}

    # -- queries ----------------------------------------------------------
    @property
    def is_empty(self):
        return not self.pieces

    def depth(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.dim == 0:
            Y = Y.reshape(len(Y), 0)
            return np.full(len(Y), np.inf if self.pieces else -np.inf)
        if not self.pieces:
            return np.full(len(Y), -np.inf)
        return np.max(np.stack([p.depth(Y) for p in self.pieces]), axis=0)

    def contains(self, Y) -> np.ndarray:
        return self.depth(Y) > 0

    def soft_indicator(self, Y, delta: float) -> np.ndarray:
        return self.level(Y, 0.0, delta)

    def level(self, Y, a: float, b: float) -> np.ndarray:
        """Smooth weight: 1 well inside (depth >= b in some piece), 0 at depth <= a in every piece."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.dim == 0:
            return np.full(len(Y), 1.0 if self.pieces else 0.0)
        miss = np.ones(len(Y))
        for p in self.pieces:
            miss = miss * (1.0 - p.level(Y, a, b))
        return 1.0 - miss

    def inner_depth(self, Y) -> float:
        """Smallest depth over the given points (how far they sit inside)."""
        d = self.depth(Y)
        return float(np.min(d)) if len(d) else np.inf

    def bounds(self):
        if not self.pieces:
            raise VFCError("BAD_DIM", "empty region has no bounds")
        los, his = zip(*(p.bounds() for p in self.pieces))
        return np.min(np.stack(los), axis=0), np.max(np.stack(his), axis=0)

    @property
    def scale(self) -> float:
        if self.dim == 0 or not self.pieces:
            return 1.0
        lo, hi = self.bounds()
        ext = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
        return float(max(ext.max(), 1e-12))

    def _counts(self, density, max_points):
        lo, hi = self.bounds()
        counts = np.maximum(2, np.ceil((hi - lo) * density)).astype(int)
        while np.prod(counts.astype(float)) > max_points:
            counts = np.maximum(2, (counts * 0.8).astype(int))
        return lo, hi, counts

    def grid_slack(self, density: float = 17.0, max_points: int = 200_000) -> float:
        """Half the cell diagonal of :meth:`grid`: every point of the region is this close to a midpoint."""
        if self.dim == 0:
            return 0.0
        lo, hi, counts = self._counts(density, max_points)
        return 0.5 * float(np.linalg.norm((hi - lo) / counts))

    def grid(self, density: float = 17.0, max_points: int = 200_000, inside: bool = True) -> np.ndarray:
        """Deterministic grid over the bounding box (cell midpoints)."""
        if self.dim == 0:
            return np.zeros((1 if self.pieces else 0, 0))
        lo, hi, counts = self._counts(density, max_points)
        axes = [lo[k] + (np.arange(c) + 0.5) * (hi[k] - lo[k]) / c for k, c in enumerate(counts)]
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        return pts[self.contains(pts)] if inside else pts

    def product(self, other: "Region") -> "Region":
        if self.dim == 0:
            return other
        if other.dim == 0:
            return self
        pieces = []
        for a in self.pieces:
            for b in other.pieces:
                if isinstance(a, Box) and isinstance(b, Box):
                    pieces.append(Box(a.lo + b.lo, a.hi + b.hi))
                else:
                    pieces.append(ProductPiece((a, b)))
        return Region(pieces, dim=self.dim + other.dim)

    def union(self, other: "Region") -> "Region":
        if other.dim != self.dim:
            raise VFCError("BAD_DIM", "union of regions of different dimension")
        return Region(self.pieces + other.pieces, dim=self.dim)

    def __repr__(self):
        return f"Region(dim={self.dim}, pieces={list(self.pieces)})"


def _piece_from_json(obj) -> Piece:
    if not isinstance(obj, dict):
        raise VFCError("SCHEMA", f"bad region piece {obj!r}")
    if "box" in obj:
        b = obj["box"]
        if isinstance(b, dict):
            return Box(tuple(b["lo"]), tuple(b["hi"]))
        return Box(tuple(b[0]), tuple(b[1]))
    if "ball" in obj:
        b = obj["ball"]
        return Ball(tuple(b["center"]), b["radius"])
    if "product" in obj:
        return ProductPiece(tuple(_piece_from_json(p) for p in obj["product"]))
    raise VFCError("SCHEMA", f"unknown region piece {sorted(obj)}")


def urysohn(inner: Region, outer: Region, delta: float | None = None):
    """Smooth function equal to 1 on ``inner`` and 0 off ``outer``.

    Requires ``inner`` to sit inside ``outer`` at depth at least ``delta``
    (checked by the callers on grids). Returns a vectorized callable.
    """
    if delta is None:
        delta = 0.1 * outer.scale

    def rho(Y):
        return outer.soft_indicator(Y, delta)

    return rho
