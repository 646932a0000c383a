"""Adaptive tensor Gauss-Legendre quadrature on boxes."""

from __future__ import annotations

import heapq
import itertools
from functools import lru_cache

import numpy as np

from .errors import VFCError

ORDER = 8
COARSE = 5
MAX_CELLS = 20000


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def _tensor_rule(n: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss_rule(n)
    nodes = np.array(list(itertools.product(x, repeat=dim))).reshape(-1, dim)
    weights = np.prod(np.array(list(itertools.product(w, repeat=dim))).reshape(-1, dim), axis=1)
    return nodes, weights


def _cell_estimates(fun, cells_lo, cells_hi):
    """Fine and coarse tensor rules on a batch of cells."""
    dim = cells_lo.shape[1]
    out = []
    for n in (ORDER, COARSE):
        nodes, weights = _tensor_rule(n, dim)
        width = cells_hi - cells_lo
        pts = cells_lo[:, None, :] + nodes[None, :, :] * width[:, None, :]
        vals = np.asarray(fun(pts.reshape(-1, dim)), dtype=float).reshape(len(cells_lo), -1)
        vol = np.prod(width, axis=1)
        out.append(vals @ weights * vol)
    fine, coarse = out
    return fine, np.abs(fine - coarse)


def integrate_box(fun, lo, hi, tol: float = 1e-8, max_cells: int = MAX_CELLS,
                  initial_splits: int = 1) -> tuple[float, float]:
    """Integrate ``fun`` (vectorized, ``(P, dim) -> (P,)``) over the box.

    Global adaptive scheme: the cell with the largest error estimate is
    bisected along its longest side until the summed estimate is below
    ``tol * (1 + |I|)``. Returns ``(value, error_estimate)``.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    dim = lo.size
    if dim == 0:
        return float(np.asarray(fun(np.zeros((1, 0))), dtype=float)[0]), 0.0
    if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
        raise VFCError("NONCONVERGED", "quadrature needs a bounded box")
    if np.any(hi <= lo):
        return 0.0, 0.0

    # start from a uniform split so narrow features are not missed entirely
    k = max(1, int(initial_splits))
    edges = [np.linspace(lo[d], hi[d], k + 1) for d in range(dim)]
    idx = np.array(list(itertools.product(range(k), repeat=dim))).reshape(-1, dim)
    c_lo = np.stack([edges[d][idx[:, d]] for d in range(dim)], axis=1)
    c_hi = np.stack([edges[d][idx[:, d] + 1] for d in range(dim)], axis=1)
    vals, errs = _cell_estimates(fun, c_lo, c_hi)

    heap = []
    counter = itertools.count()
    total = 0.0
    err_total = 0.0
    for a, b, v, e in zip(c_lo, c_hi, vals, errs):
        heapq.heappush(heap, (-e, next(counter), a, b, v, e))
        total += v
        err_total += e
    ncells = len(heap)
    while err_total > tol * (1.0 + abs(total)):
        if ncells >= max_cells:
            raise VFCError("NONCONVERGED", f"adaptive quadrature hit {max_cells} cells",
                           estimate=total, error=err_total)
        # refine a batch of the worst cells at once
        batch = []
        target = err_total - 0.5 * tol * (1.0 + abs(total))
        removed = 0.0
        while heap and (removed < target or not batch) and len(batch) < 256:
            item = heapq.heappop(heap)
            batch.append(item)
            removed += item[5]
        new_lo, new_hi = [], []
        for _, _, a, b, v, e in batch:
            total -= v
            err_total -= e
            axis = int(np.argmax(b - a))
            mid = 0.5 * (a[axis] + b[axis])
            b1 = b.copy()
            b1[axis] = mid
            a2 = a.copy()
            a2[axis] = mid
            new_lo += [a, a2]
            new_hi += [b1, b]
        new_lo = np.array(new_lo)
        new_hi = np.array(new_hi)
        vals, errs = _cell_estimates(fun, new_lo, new_hi)
        for a, b, v, e in zip(new_lo, new_hi, vals, errs):
            heapq.heappush(heap, (-e, next(counter), a, b, v, e))
            total += v
            err_total += e
        ncells += len(batch)
        err_total = max(err_total, 0.0)
    # re-sum in a fixed order so the result does not depend on heap history
    items = sorted(heap, key=lambda it: (tuple(it[2]), tuple(it[3])))
    return float(sum(it[4] for it in items)), float(err_total)


def composite_rule(lo: float, hi: float, panels: int, n: int = ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Fixed composite Gauss-Legendre nodes and weights on an interval."""
    x, w = gauss_rule(n)
    edges = np.linspace(lo, hi, panels + 1)
    width = np.diff(edges)
    nodes = (edges[:-1, None] + width[:, None] * x[None, :]).ravel()
    weights = (width[:, None] * w[None, :]).ravel()
    return nodes, weights
