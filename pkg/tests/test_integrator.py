import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from covrel.integrator import IntegratorConfig, MaxStepsExceeded, WidthBlowup, a_priori_enclosure, deviation_upper, flow
from covrel.interval import Box
from covrel.system import linear_decay, planar_rotation, rossler, zero_field

E1 = 0.3678794411714423


def fixed(order, h):
    return IntegratorConfig(order=order, h_min=h, h_max=h, tol=1e-300)


def test_decay_closed_form():
    fe = flow(linear_decay(1), Box.point([1.0]), 1.0)
    x = fe.at_time[0]
    assert x.contains(E1)
    assert x.contains(math.exp(-1))
    assert x.width <= 1e-6
    assert fe.time.contains(1.0)


@pytest.mark.parametrize("order", [3, 4, 6])
def test_order_convergence(order):
    widths = [flow(linear_decay(1), Box.point([1.0]), 1.0, fixed(order, h)).at_time[0].width for h in (0.25, 0.125, 0.0625)]
    for w0, w1 in zip(widths, widths[1:]):
        assert w0 / w1 >= 2 ** (order - 1) / 4


def test_rotation_full_turn():
    fe = flow(planar_rotation(), Box.point([1.0, 0.0]), 2 * math.pi)
    # 2*pi as a float is slightly below the true value
    x, y = fe.at_time
    assert x.contains(math.cos(2 * math.pi)) and y.contains(math.sin(2 * math.pi))
    assert max(x.width, y.width) < 1e-10


def test_rossler_against_scipy():
    s = rossler()
    rng = np.random.default_rng(2)
    f = lambda t, u: [-(u[1] + u[2]), u[0] + 0.2 * u[1], 0.2 + u[2] * (u[0] - 5.7)]
    for _ in range(5):
        u0 = np.array([rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(0, 1)])
        fe = flow(s, Box.point(u0), 2.0)
        ref = solve_ivp(f, (0, 2.0), u0, method="DOP853", rtol=1e-13, atol=1e-13).y[:, -1]
        for c, r in zip(fe.at_time, ref):
            assert c.lo - 1e-9 <= r <= c.hi + 1e-9
        assert max(fe.at_time.width) < 1e-8


def test_box_initial_condition_contains_samples():
    s = rossler()
    B = Box([(-1e-3, 1e-3), (-8.4 - 1e-3, -8.4 + 1e-3), (0.03, 0.031)])
    fe = flow(s, B, 1.0)
    f = lambda t, u: [-(u[1] + u[2]), u[0] + 0.2 * u[1], 0.2 + u[2] * (u[0] - 5.7)]
    rng = np.random.default_rng(0)
    for u0 in rng.uniform(B.lo, B.hi, size=(20, 3)):
        r = solve_ivp(f, (0, 1.0), u0, method="DOP853", rtol=1e-12, atol=1e-12).y[:, -1]
        assert fe.at_time.contains(r)
        assert fe.over_interval.contains(u0)


def test_apriori_contains_short_flow():
    s = rossler()
    B = Box.point([1.0, -2.0, 0.5])
    E = a_priori_enclosure(s, B, 0.05)
    fe = flow(s, B, 0.05)
    assert E.contains(fe.at_time.midpoint)


def test_inclusion_zero_field():
    fe = flow(zero_field(3), Box.point([0.0, 0.0, 0.0]), 1.0, delta=0.1)
    for c in fe.at_time:
        assert c.lo <= -0.1 and c.hi >= 0.1
        assert c.width < 0.2 + 1e-9


def test_inclusion_decay_bound():
    # x' = -x + e with |e| <= d stays within d (1 - e^-t) of the unperturbed solution
    d = 1e-3
    fe = flow(linear_decay(1), Box.point([1.0]), 1.0, delta=d)
    x = fe.at_time[0]
    assert x.contains(E1 - d * (1 - E1)) and x.contains(E1 + d * (1 - E1))


def test_deviation_upper():
    assert deviation_upper(0.0, 0.1, 2.0) >= 0.2
    assert deviation_upper(1.0, 0.01, 1.0) == pytest.approx(0.01 * (math.e - 1), rel=1e-12)
    assert deviation_upper(1.0, 0.01, 1.0) >= 0.01 * (math.e - 1)


def test_blowup_and_step_limits():
    with pytest.raises(WidthBlowup):
        flow(rossler(), Box([(-5, 5), (-5, 5), (0, 5)]), 5.0, IntegratorConfig(width_ceiling=1.0))
    with pytest.raises(MaxStepsExceeded):
        flow(rossler(), Box.point([1.0, 1.0, 0.1]), 5.0, IntegratorConfig(max_steps=3, h_max=0.01))


def test_bad_config():
    with pytest.raises(ValueError):
        IntegratorConfig(order=1)
    with pytest.raises(ValueError):
        IntegratorConfig(h_min=1.0, h_max=0.1)
    with pytest.raises(ValueError):
        flow(linear_decay(1), Box.point([1.0]), -1.0)
