"""Differential forms on the strata of a chart, stored as coefficient evaluators.

A degree-k form on a stratum with real coordinates ``x_0..x_{N-1}`` is the
sum over sorted index tuples ``I`` of ``coef_I(x) dx_I``. Coefficients are
computed in batches: ``coeffs(X, vertex)`` maps an ``(P, N)`` array of
points to a ``(P, C(N, k))`` array whose columns follow :func:`basis`.
``vertex`` is the tropical vertex (a tuple of Fractions, ``()`` when the
chart has no tropical directions) labelling the stratum.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import VFCError

FD_STEP = 1e-5


@lru_cache(maxsize=None)
def basis(dim: int, degree: int) -> tuple:
    return tuple(itertools.combinations(range(dim), degree))


@lru_cache(maxsize=None)
def _index(dim: int, degree: int) -> dict:
    return {I: n for n, I in enumerate(basis(dim, degree))}


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@lru_cache(maxsize=None)
def _wedge_table(dim: int, p: int, q: int):
    """List of (J index, I index, K index, sign) with dx_I ^ dx_K = sign dx_J."""
    table = []
    jdx = _index(dim, p + q)
    for a, I in enumerate(basis(dim, p)):
        for b, K in enumerate(basis(dim, q)):
            if set(I) & set(K):
                continue
            J = tuple(sorted(I + K))
            table.append((jdx[J], a, b, _perm_sign(I + K)))
    return table


@lru_cache(maxsize=None)
def _d_table(dim: int, p: int):
    """(J index, I index, l, sign) with dx_l ^ dx_I = sign dx_J."""
    table = []
    jdx = _index(dim, p + 1)
    for a, I in enumerate(basis(dim, p)):
        for l in range(dim):
            if l in I:
                continue
            J = tuple(sorted((l,) + I))
            table.append((jdx[J], a, l, _perm_sign((l,) + I)))
    return table


def det_minors(M: np.ndarray, rows, cols) -> np.ndarray:
    """Batched determinants of ``M[:, rows][:, :, cols]``; 1 for empty index sets."""
    if len(rows) == 0:
        return np.ones(M.shape[0])
    sub = M[:, list(rows)][:, :, list(cols)]
    return np.linalg.det(sub)


class Form:
    """Evaluator-backed differential form with flags.

    ``d_coeffs`` optionally gives the coefficients of the exterior derivative
    directly; otherwise :meth:`d` uses central differences.
    """

    def __init__(self, degree: int, dim: int, coeffs: Callable, *, d_coeffs: Callable | None = None,
                 in_omega: bool = True, generated_by_functions: bool = False, refined: bool = False,
                 name: str = "", scale: float = 1.0):
        if degree < 0:
            raise VFCError("DEGREE_OVERFLOW", f"negative degree {degree}")
        if degree > dim:
            raise VFCError("DEGREE_OVERFLOW", f"degree {degree} exceeds dimension {dim}")
        self.degree = degree
        self.dim = dim
        self._coeffs = coeffs
        self._d_coeffs = d_coeffs
        self.in_omega = in_omega
        self.generated_by_functions = generated_by_functions
        self.refined = refined
        self.name = name
        self.scale = scale

    @property
    def ncomp(self) -> int:
        return len(basis(self.dim, self.degree))

    def coeffs(self, X, vertex=()) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.asarray(self._coeffs(X, vertex), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        return np.broadcast_to(out, (len(X), self.ncomp)).copy()

    def __call__(self, X, vectors, vertex=()) -> np.ndarray:
        """Evaluate on ``degree`` tangent vectors, ``vectors`` of shape (P, k, N)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = self.coeffs(X, vertex)
        if self.degree == 0:
            return c[:, 0]
        V = np.asarray(vectors, dtype=float).reshape(len(X), self.degree, self.dim)
        M = np.transpose(V, (0, 2, 1))  # (P, N, k)
        out = np.zeros(len(X))
        full = tuple(range(self.degree))
        for n, I in enumerate(basis(self.dim, self.degree)):
            out += c[:, n] * det_minors(M, I, full)
        return out

    def _flags(self, other: "Form | None" = None) -> dict:
        if other is None:
            return dict(in_omega=self.in_omega, generated_by_functions=self.generated_by_functions,
                        refined=self.refined, scale=self.scale)
        return dict(in_omega=self.in_omega and other.in_omega,
                    generated_by_functions=self.generated_by_functions and other.generated_by_functions,
                    refined=self.refined or other.refined, scale=min(self.scale, other.scale))

    # -- algebra ----------------------------------------------------------
    def __add__(self, other: "Form") -> "Form":
        if (other.degree, other.dim) != (self.degree, self.dim):
            raise VFCError("DEGREE_MISMATCH", "adding forms of different degree")
        dc = None
        if self._d_coeffs is not None and other._d_coeffs is not None:
            dc = lambda X, v: self.d().coeffs(X, v) + other.d().coeffs(X, v)
        return Form(self.degree, self.dim, lambda X, v: self.coeffs(X, v) + other.coeffs(X, v),
                    d_coeffs=dc, name=f"({self.name}+{other.name})", **self._flags(other))

    def scaled(self, c: float) -> "Form":
        dc = None if self._d_coeffs is None else (lambda X, v: c * self._d_coeffs(X, v))
        return Form(self.degree, self.dim, lambda X, v: c * self.coeffs(X, v), d_coeffs=dc,
                    name=f"{c}*{self.name}", **self._flags())

    def times_function(self, f: Callable) -> "Form":
        """Multiply by a scalar function ``f(X, vertex) -> (P,)``."""
        return Form(self.degree, self.dim, lambda X, v: f(X, v)[:, None] * self.coeffs(X, v),
                    name=f"f*{self.name}", **self._flags())

    def wedge(self, other: "Form") -> "Form":
        return wedge(self, other)

    def d(self) -> "Form":
        return d(self)

    def contract_check(self, X, direction: int, vertex=()) -> np.ndarray:
        """Max |coefficient| among components containing ``dx_direction``."""
        c = self.coeffs(X, vertex)
        cols = [n for n, I in enumerate(basis(self.dim, self.degree)) if direction in I]
        if not cols:
            return np.zeros(len(c))
        return np.abs(c[:, cols]).max(axis=1)


def wedge(a: Form, b: Form) -> Form:
    if a.dim != b.dim:
        raise VFCError("BAD_DIM", "wedge of forms on different spaces")
    if a.degree + b.degree > a.dim:
        raise VFCError("DEGREE_OVERFLOW", f"degree {a.degree + b.degree} exceeds dimension {a.dim}")
    table = _wedge_table(a.dim, a.degree, b.degree)
    ncomp = len(basis(a.dim, a.degree + b.degree))

    def coeffs(X, v):
        ca = a.coeffs(X, v)
        cb = b.coeffs(X, v)
        out = np.zeros((len(ca), ncomp))
        for J, I, K, s in table:
            out[:, J] += s * ca[:, I] * cb[:, K]
        return out

    return Form(a.degree + b.degree, a.dim, coeffs, name=f"{a.name}^{b.name}", **a._flags(b))


def _fd_gradient(fun, X, v, h):
    """Central differences of a coefficient array along every coordinate."""
    P, N = X.shape
    grads = []
    for l in range(N):
        e = np.zeros(N)
        e[l] = h
        grads.append((fun(X + e, v) - fun(X - e, v)) / (2 * h))
    return np.stack(grads, axis=-1)  # (P, ncomp, N)


def d(a: Form) -> Form:
    if a.degree + 1 > a.dim:
        raise VFCError("DEGREE_OVERFLOW", f"d of a top-degree form on a {a.dim}-dimensional space")
    if a._d_coeffs is not None:
        dd = None
        if a.degree + 2 <= a.dim:
            n2 = len(basis(a.dim, a.degree + 2))
            dd = lambda X, v: np.zeros((len(X), n2))
        return Form(a.degree + 1, a.dim, a._d_coeffs, d_coeffs=dd, name=f"d{a.name}", **a._flags())
    table = _d_table(a.dim, a.degree)
    ncomp = len(basis(a.dim, a.degree + 1))
    h = FD_STEP * a.scale

    def coeffs(X, v):
        g = _fd_gradient(a.coeffs, X, v, h)
        out = np.zeros((len(X), ncomp))
        for J, I, l, s in table:
            out[:, J] += s * g[:, I, l]
        return out

    return Form(a.degree + 1, a.dim, coeffs, name=f"d{a.name}", **a._flags())


def pullback(a: Form, fmap: Callable, jacobian: Callable | None, dim: int) -> Form:
    """Pull ``a`` back along ``fmap: R^dim -> R^{a.dim}``.

    ``jacobian(Y, v)`` returns ``(P, a.dim, dim)``; finite differences are used
    when it is None. ``fmap(Y, v)`` returns ``(points, vertex)`` or points.
    """
    if a.degree > dim:
        raise VFCError("DEGREE_OVERFLOW", f"cannot pull a {a.degree}-form back to dimension {dim}")
    src = basis(a.dim, a.degree)
    tgt = basis(dim, a.degree)

    def _map(Y, v):
        out = fmap(Y, v)
        return out if isinstance(out, tuple) else (out, v)

    def jac(Y, v):
        if jacobian is not None:
            return jacobian(Y, v)
        return numeric_jacobian(lambda Z: _map(Z, v)[0], Y, FD_STEP * a.scale)

    def coeffs(Y, v):
        X, w = _map(Y, v)
        c = a.coeffs(X, w)
        if a.degree == 0:
            return c
        J = jac(Y, v)
        out = np.zeros((len(Y), len(tgt)))
        for k, K in enumerate(tgt):
            for n, I in enumerate(src):
                out[:, k] += c[:, n] * det_minors(J, I, K)
        return out

    return Form(a.degree, dim, coeffs, name=f"pullback({a.name})", **a._flags())


def numeric_jacobian(fun: Callable, Y: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Jacobian of ``fun: (P, n) -> (P, m)`` as ``(P, m, n)``."""
    Y = np.atleast_2d(Y)
    cols = []
    for l in range(Y.shape[1]):
        e = np.zeros(Y.shape[1])
        e[l] = h
        cols.append((np.asarray(fun(Y + e)) - np.asarray(fun(Y - e))) / (2 * h))
    return np.stack(cols, axis=-1)


# -- simple constructors ---------------------------------------------------

def constant_form(dim: int, value: float = 1.0, name: str = "const") -> Form:
    """The 0-form with a constant value."""
    return Form(0, dim, lambda X, v: np.full((len(X), 1), float(value)),
                d_coeffs=(lambda X, v: np.zeros((len(X), dim))) if dim >= 1 else None,
                generated_by_functions=True, name=name)


def function_form(dim: int, f: Callable, grad: Callable | None = None, name: str = "f",
                  scale: float = 1.0) -> Form:
    """0-form from ``f(X, v) -> (P,)``; ``grad(X, v) -> (P, dim)`` optional."""
    dc = None
    if grad is not None:
        dc = lambda X, v: np.asarray(grad(X, v), dtype=float).reshape(len(X), dim)
    return Form(0, dim, lambda X, v: np.asarray(f(X, v), dtype=float).reshape(-1, 1), d_coeffs=dc,
                generated_by_functions=True, name=name, scale=scale)


def coordinate_form(dim: int, indices, name: str | None = None) -> Form:
    """``dx_{i1} ^ ... ^ dx_{ik}`` (indices need not be sorted)."""
    indices = tuple(indices)
    J = tuple(sorted(indices))
    if len(set(J)) != len(J):
        return Form(len(J), dim, lambda X, v: np.zeros((len(X), len(basis(dim, len(J))))))
    col = _index(dim, len(J))[J]
    sign = _perm_sign(indices)
    n = len(basis(dim, len(J)))

    def coeffs(X, v):
        out = np.zeros((len(X), n))
        out[:, col] = sign
        return out

    dc = (lambda X, v: np.zeros((len(X), len(basis(dim, len(J) + 1))))) if len(J) < dim else None
    return Form(len(J), dim, coeffs, d_coeffs=dc, generated_by_functions=True,
                name=name or "d" + "d".join(f"x{i}" for i in indices))


def top_form(dim: int, density: Callable, name: str = "vol") -> Form:
    """``density(X, v) dx_0 ^ ... ^ dx_{dim-1}``."""
    return Form(dim, dim, lambda X, v: np.asarray(density(X, v), dtype=float).reshape(-1, 1),
                d_coeffs=None, generated_by_functions=True, name=name)
