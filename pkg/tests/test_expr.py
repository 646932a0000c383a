import numpy as np
import pytest

from vfc.errors import VFCError
from vfc.expr import compile_exprs, parse


def test_complex_names_match_numpy():
    X = np.random.default_rng(0).normal(size=(20, 2))
    z = X[:, 0] + 1j * X[:, 1]
    f = compile_exprs(["z", "z*z - 3", "zb", "conj(z) * abs(z)", "exp(I*x1)"], 2)
    out = f(X)
    assert out.shape == (20, 5)
    np.testing.assert_allclose(out[:, 0], z)
    np.testing.assert_allclose(out[:, 1], z * z - 3)
    np.testing.assert_allclose(out[:, 2], np.conj(z))
    np.testing.assert_allclose(out[:, 3], np.conj(z) * np.abs(z))
    np.testing.assert_allclose(out[:, 4], np.exp(1j * X[:, 1]))


def test_tropical_coefficient():
    # chart with one smooth and one tropical direction: X = (u, s, t)
    X = np.array([[0.5, 0.2, 1.0], [-1.0, -0.3, 4.0]])
    f = compile_exprs(["c - 1", "s0 + t0", "c0 * x0"], 1, 1)
    c = np.exp(X[:, 1] + 1j * X[:, 2])
    np.testing.assert_allclose(f(X), np.stack([c - 1, X[:, 1] + X[:, 2], c * X[:, 0]], axis=1))


def test_real_output_and_constants():
    f = compile_exprs(["2", "pi * x0", "sqrt(x0*x0 + 1)"], 1, complex_out=False)
    X = np.array([[0.0], [3.0]])
    out = f(X)
    assert out.dtype == float
    np.testing.assert_allclose(out, [[2, 0, 1], [2, 3 * np.pi, np.sqrt(10)]])


@pytest.mark.parametrize("text", [
    "__import__('os')", "x0.real", "lambda: 1", "'z'", "y", "z3", "open(1)", "exp(x0, x1)", "x0 if x1 else 2",
    "[x0]", "x0 <", "exp(x=1)",
])
def test_rejects_anything_outside_the_grammar(text):
    with pytest.raises(VFCError) as err:
        parse(text, 2)
    assert err.value.code == "SCHEMA"


def test_names_depend_on_chart_shape():
    parse("c", 0, 1)
    with pytest.raises(VFCError):
        parse("c", 2, 0)
    with pytest.raises(VFCError):
        parse("z", 1, 0)
