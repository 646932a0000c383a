"""Arithmetic expressions over chart coordinates, compiled to numpy callables.

Names available in a chart with ``n`` smooth and ``m`` tropical directions:

* ``x0, x1, ...`` real coordinates in chart order;
* ``z0, z1, ...`` complex pairs ``x_{2j} + i x_{2j+1}`` of the smooth part
  (``z`` is ``z0``), and ``zb0, ...`` their conjugates;
* ``c0, c1, ...`` tropical coefficients ``exp(s_j + i t_j)`` (``c`` is ``c0``);
* ``s0, t0, ...`` the tropical coordinates themselves;
* functions ``exp log sqrt sin cos conj re im abs`` and the constant ``I``.

Expressions are checked against a small grammar before sympy sees them.
"""

from __future__ import annotations

import ast
import re

import numpy as np
import sympy as sp

from .errors import VFCError

FUNCTIONS = {"exp": sp.exp, "log": sp.log, "sqrt": sp.sqrt, "sin": sp.sin, "cos": sp.cos,
             "conj": sp.conjugate, "re": sp.re, "im": sp.im, "abs": sp.Abs}
_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
            ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)
_NAME = re.compile(r"^(x|z|zb|c|s|t)(\d+)$")


def _symbols(n: int, m: int) -> dict:
    dim = n + 2 * m
    xs = sp.symbols(f"x0:{dim}", real=True) if dim else ()
    names = {f"x{k}": xs[k] for k in range(dim)}
    for j in range(n // 2):
        names[f"z{j}"] = xs[2 * j] + sp.I * xs[2 * j + 1]
        names[f"zb{j}"] = xs[2 * j] - sp.I * xs[2 * j + 1]
    for j in range(m):
        s, t = xs[n + 2 * j], xs[n + 2 * j + 1]
        names[f"s{j}"], names[f"t{j}"] = s, t
        names[f"c{j}"] = sp.exp(s + sp.I * t)
    if "z0" in names:
        names["z"], names["zb"] = names["z0"], names["zb0"]
    if "c0" in names:
        names["c"] = names["c0"]
    names["I"] = sp.I
    names["pi"] = sp.pi
    return names, xs


def _check(text: str, names: dict):
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise VFCError("SCHEMA", f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise VFCError("SCHEMA", f"{type(node).__name__} is not allowed in expressions ({text!r})")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords \
                    or len(node.args) != 1:
                raise VFCError("SCHEMA", f"unknown function call in {text!r}")
        elif isinstance(node, ast.Name) and node.id not in names and node.id not in FUNCTIONS:
            raise VFCError("SCHEMA", f"unknown name {node.id!r} in {text!r}")
        elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise VFCError("SCHEMA", f"only numeric constants are allowed ({text!r})")
    return tree


def parse(text: str, n: int, m: int = 0) -> sp.Expr:
    names, _ = _symbols(n, m)
    _check(str(text), names)
    return sp.sympify(str(text), locals={**names, **FUNCTIONS}, rational=False)


def compile_exprs(texts, n: int, m: int = 0, complex_out: bool = True):
    """Vectorized callable ``X -> (P, len(texts))`` for a list of expressions."""
    names, xs = _symbols(n, m)
    exprs = [parse(t, n, m) for t in texts]
    fns = [sp.lambdify([xs], e, modules=[{"conjugate": np.conj, "re": np.real, "im": np.imag}, "numpy"])
           for e in exprs]
    dtype = complex if complex_out else float

    def f(X, v=()):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cols = [X[:, k] for k in range(X.shape[1])]
        out = np.empty((len(X), len(fns)), dtype=dtype)
        for k, fn in enumerate(fns):
            val = np.asarray(fn(cols), dtype=complex)
            out[:, k] = val if complex_out else val.real
        return out
    return f
