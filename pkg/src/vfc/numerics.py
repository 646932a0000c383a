"""Small numerical kernels: realification, Jacobians, min-norm Newton, dedupe."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import VFCError


def realify(values: np.ndarray) -> np.ndarray:
    """(P, d) complex -> (P, 2d) real as (Re v1, Im v1, Re v2, Im v2, ...)."""
    values = np.asarray(values)
    out = np.empty(values.shape[:-1] + (2 * values.shape[-1],))
    out[..., 0::2] = values.real
    out[..., 1::2] = values.imag
    return out


def complexify(values: np.ndarray) -> np.ndarray:
    return values[..., 0::2] + 1j * values[..., 1::2]


def fd_jacobian(fun, X: np.ndarray, h: float) -> np.ndarray:
    """Real Jacobian (P, 2d, N) of a complex-valued ``fun: (P, N) -> (P, d)``."""
    X = np.atleast_2d(X)
    cols = []
    for l in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[l] = h
        cols.append((realify(fun(X + e)) - realify(fun(X - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def min_norm_newton(fun, jac, X0: np.ndarray, *, tol: float = 1e-12, max_iter: int = 60,
                    max_step: float = 0.5, periodic: tuple = (), keep=None):
    """Vectorized Newton with pseudo-inverse steps.

    For square systems this is Newton's method; for underdetermined ones it
    projects onto the zero set (Gauss-Newton, minimal-norm correction).
    Returns ``(X, converged_mask)``.
    """
    X = np.array(X0, dtype=float, copy=True)
    active = np.ones(len(X), dtype=bool)
    conv = np.zeros(len(X), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        F = realify(fun(X[idx]))
        res = np.linalg.norm(F, axis=1)
        done = res < tol
        conv[idx[done]] = True
        active[idx[done]] = False
        bad = ~np.isfinite(res)
        active[idx[bad]] = False
        idx = idx[~done & ~bad]
        if len(idx) == 0:
            break
        J = jac(X[idx])
        F = F[~done & ~bad]
        step = -np.einsum("pij,pj->pi", np.linalg.pinv(J), F)
        norm = np.linalg.norm(step, axis=1)
        scale = np.minimum(1.0, max_step / np.maximum(norm, 1e-300))
        X[idx] += step * scale[:, None]
        for k in periodic:
            X[idx, k] = np.mod(X[idx, k], 2 * np.pi)
        if keep is not None:
            inside = keep(X[idx])
            active[idx[~inside]] = False
    # final residual check for points that converged on the last step
    if active.any():
        idx = np.nonzero(active)[0]
        res = np.linalg.norm(realify(fun(X[idx])), axis=1)
        conv[idx[res < tol * 10]] = True
    return X, conv


def dedupe(points: np.ndarray, radius: float, periodic: tuple = ()) -> np.ndarray:
    """Indices of representatives; earlier points in lexicographic order win."""
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    emb = _embed(points, periodic)
    order = np.lexsort(points.T[::-1])
    tree = cKDTree(emb)
    removed = np.zeros(len(points), dtype=bool)
    keep = []
    for i in order:
        if removed[i]:
            continue
        keep.append(i)
        removed[tree.query_ball_point(emb[i], radius)] = True
    return np.array(keep, dtype=int)


def _embed(points, periodic):
    """Replace each angle by (cos, sin) so Euclidean distance respects periodicity."""
    if not periodic:
        return np.asarray(points, dtype=float)
    cols = []
    for k in range(points.shape[1]):
        if k in periodic:
            cols += [np.cos(points[:, k]), np.sin(points[:, k])]
        else:
            cols.append(points[:, k])
    return np.stack(cols, axis=1)


def nearest_distance(points: np.ndarray, queries: np.ndarray, periodic: tuple = ()) -> np.ndarray:
    """Distance from each query to the nearest of ``points`` (inf if none)."""
    if len(points) == 0:
        return np.full(len(queries), np.inf)
    tree = cKDTree(_embed(points, periodic))
    dist, _ = tree.query(_embed(np.atleast_2d(queries), periodic))
    return dist


def smallest_singular(J: np.ndarray) -> np.ndarray:
    if J.shape[1] == 0:
        return np.full(J.shape[0], np.inf)
    return np.linalg.svd(J, compute_uv=False)[:, -1]


def require_finite(arr, what: str):
    if not np.all(np.isfinite(arr)):
        raise VFCError("NONCONVERGED", f"non-finite values in {what}")
    return arr
