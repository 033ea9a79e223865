import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, settings, strategies as st

from covrel.interval import Box, IArray, Interval
from covrel.system import RosslerParams, constant_field, eval_field, eval_jacobian, lognorm_bound, planar_rotation, rossler


def rossler_float(u, a=5.7, b=0.2):
    x, y, z = u
    return np.array([-(y + z), x + b * y, b + z * (x - a)])


def test_params_are_enclosed_exactly():
    s = rossler()
    a, b = s.iparams["a"], s.iparams["b"]
    assert Fraction(a.lo) <= Fraction("5.7") <= Fraction(a.hi)
    assert Fraction(b.lo) <= Fraction("0.2") <= Fraction(b.hi)
    assert a.lo < a.hi  # 5.7 is not a binary float


def test_field_encloses_float_field():
    rng = np.random.default_rng(0)
    s = rossler()
    for _ in range(100):
        u = rng.uniform(-15, 15, 3)
        F = s.field(Box.point(u))
        assert F.contains(rossler_float(u))


def test_jacobian_entries():
    J = eval_jacobian(RosslerParams(), Box.point([1.0, 2.0, 3.0]))
    expect = [[0, -1, -1], [1, 0.2, 0], [3.0, 0, 1.0 - 5.7]]
    for i in range(3):
        for j in range(3):
            assert J[i][j].contains(expect[i][j])


def test_float_and_interval_paths_agree():
    rng = np.random.default_rng(1)
    s = rossler()
    U = rng.normal(scale=5, size=(64, 3))
    Ff = s.field_float(U)
    Fi = s.field_iarray(IArray(U))
    assert np.all(Fi.contains(Ff))
    Jf = s.jacobian_float(U)
    Ji = s.jacobian_iarray(IArray(U))
    assert np.all(Ji.contains(Jf))


def test_lognorm_bound():
    # mu_inf of [[-1, 0.5], [0.2, -3]] is max(-0.5, -2.8)
    J = [[Interval.point(-1.0), Interval.point(0.5)], [Interval.point(0.2), Interval.point(-3.0)]]
    assert lognorm_bound(J) == pytest.approx(-0.5, abs=1e-15)
    assert lognorm_bound(J) >= -0.5


def test_wrong_dimension_rejected():
    with pytest.raises(ValueError):
        eval_field(RosslerParams(), Box.point([1.0, 2.0]))


def test_small_systems():
    assert planar_rotation().field(Box.point([1.0, 0.0])).contains([0.0, 1.0])
    assert constant_field(["1", "2"]).field(Box.point([5.0, 5.0])).contains([1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3), st.floats(0, 0.5))
def test_field_box_contains_pointwise(c, r):
    s = rossler()
    B = Box([(x - r, x + r) for x in c])
    F = s.field(B)
    rng = np.random.default_rng(0)
    for u in rng.uniform(np.array(c) - r, np.array(c) + r, size=(10, 3)):
        assert F.contains(rossler_float(u))
