import numpy as np
import pytest

from oracles import winding_number
from shared import context
from vfc.charts import manifold_chart
from vfc.errors import VFCError
from vfc.kcat import KChart
from vfc.regions import Region
from vfc.vclass import orientation_sign, virtual_dimension, zero_set

BOXES = (Region.box([-3, -3], [3, 3]), Region.box([-2.5, -2.5], [2.5, 2.5]), Region.box([-2, -2], [2, 2]))


def section(f):
    return lambda X, v=(): f(np.atleast_2d(X)[:, 0] + 1j * np.atleast_2d(X)[:, 1])[:, None]


def plane_chart(f):
    sharp, prime, core = BOXES
    return KChart("a", manifold_chart(sharp), core, prime, 1, section(f))


POLYS = {
    "z": lambda z: z,
    "zbar": lambda z: np.conj(z),
    "z^3": lambda z: z ** 3 - 0.5,
    "(z-1)(z+1)conj(z-0.5i)": lambda z: (z - 1) * (z + 1) * np.conj(z - 0.5j),
    "z^2 - 1 + 0.3 zbar": lambda z: z ** 2 - 1 + 0.3 * np.conj(z),
}


@pytest.mark.parametrize("name", list(POLYS))
def test_signed_count_matches_winding_number(name):
    f = POLYS[name]
    c = plane_chart(f)
    z = zero_set(section(f), c)
    # all zeros lie well inside the radius-2 disk, which sits inside F'
    assert np.all(np.hypot(z.points[:, 0], z.points[:, 1]) < 1.8)
    assert z.signed_count() == winding_number(f, 2.0)
    np.testing.assert_allclose(np.abs(f(z.points[:, 0] + 1j * z.points[:, 1])), 0, atol=1e-9)


def test_orientation_sign_of_linear_maps():
    # rows are (Re, Im) of a complex-linear map and of its conjugate
    J = np.array([[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, -1.0]], [[2.0, 1.0], [-1.0, 2.0]]])
    np.testing.assert_array_equal(orientation_sign(J), [1, -1, 1])


def test_non_transverse_zero_is_reported():
    z = zero_set(section(lambda z: z * z), plane_chart(lambda z: z * z))
    # the double zero at 0 is found with a vanishing transversality margin
    assert z.margin < 1e-4


def test_curve_zero_set_is_closed():
    vc = context("circle").vclass()
    (piece,) = [p for p in vc.pieces if p[4].curves]
    z = piece[4]
    assert len(z.curves) == 1 and z.curves[0].closed
    nodes = z.curves[0].nodes
    np.testing.assert_allclose(np.linalg.norm(z.fun(nodes), axis=1), 0, atol=1e-8)


def test_periodic_coordinate_gives_no_duplicate_curves():
    vc = context("tropical_circle").vclass()
    curves = [c for *_, z in vc.pieces if z.k == 1 for c in z.curves]
    assert len(curves) == 2
    # one curve at each of t = 0 and t = pi
    t_mean = sorted(abs(np.angle(np.exp(1j * c.nodes[:, -1])).mean()) for c in curves)
    np.testing.assert_allclose(t_mean, [0.0, np.pi], atol=1e-6)


@pytest.mark.parametrize("name,count", [("z", 1), ("z2", 2), ("zbar", -1), ("z2_orbifold", 1), ("segment", 3)])
def test_count_does_not_depend_on_seed(name, count):
    ctx = context(name)
    for seed in ctx.seeds:
        assert ctx.vclass(seed).signed_count() == count


def test_virtual_dimension():
    assert virtual_dimension(context("z").K) == 0
    assert virtual_dimension(context("circle").K) == 1


def test_high_dimensional_zero_set_needs_parametrization():
    c = KChart("b", manifold_chart(Region.box([-3] * 4, [3] * 4)), Region.box([-2] * 4, [2] * 4),
               Region.box([-2.5] * 4, [2.5] * 4), 1, section(lambda z: z))
    with pytest.raises(VFCError) as err:
        zero_set(section(lambda z: z), c)
    assert err.value.code == "DIM_UNSUPPORTED"
