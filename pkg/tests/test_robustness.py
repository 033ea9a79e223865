import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covrel.covering import CoveringCertificate
from covrel.interval import Box, Interval
from covrel.robustness import (
    MissingEnclosureData,
    NeverVerified,
    ZeroMargin,
    analytical_delta,
    bisect_delta,
    computational_delta_search,
    delta_from_slack,
    deviation_bound,
    global_enclosure,
    inclusion_flow,
)
from covrel.system import linear_decay, rossler, zero_field


def cert(m=(0.1, 0.2, 0.3), enclosure=None, name="a"):
    return CoveringCertificate(name, "b", True, 1, *m, Interval(1.0, 2.0), (4, 4, 4), enclosure=enclosure,
                               transversality=Interval(1.0, 2.0))


def test_deviation_bound_values():
    assert deviation_bound(1.0, 0.01, 1.0) == pytest.approx(0.01 * (math.e - 1), rel=1e-12)
    assert deviation_bound(0.0, 0.01, 3.0) >= 0.03
    assert deviation_bound(0.0, 0.01, 3.0) == pytest.approx(0.03)
    with pytest.raises(ValueError):
        deviation_bound(1.0, 0.01, -1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 5), st.floats(1e-8, 1.0), st.floats(0.01, 20))
def test_delta_from_slack_is_safe(L, slack, t):
    d = delta_from_slack(slack, L, t)
    assert d >= 0
    assert deviation_bound(L, d, t) <= slack * (1 + 1e-12)
    # and not absurdly pessimistic
    if L > 0:
        exact = slack * L / math.expm1(L * t)
        assert d >= exact * (1 - 1e-6)


def test_analytical_closed_form():
    r = analytical_delta([cert()], Box.point([0.0, 0.0, 0.0]), 6.0, [1.0], [Interval.point(1.0)], L=2.0, speed=1.0)
    # slack 0.1 / C with C = 1 + 1/1
    expect = 0.05 * 2.0 / math.expm1(12.0)
    assert r.delta_certified == pytest.approx(expect, rel=1e-9)
    assert r.delta_certified <= expect * (1 + 1e-15)
    assert r.per_relation[0]["C"] == pytest.approx(2.0)


def test_analytical_uses_smallest_margin_and_relation():
    cs = [cert((0.5, 0.5, 0.5)), cert((0.5, 0.01, 0.5))]
    r = analytical_delta(cs, Box.point([0.0] * 3), 1.0, [1.0, 1.0], [Interval.point(1.0)] * 2, L=1.0, speed=1.0)
    assert r.delta_certified == pytest.approx(r.per_relation[1]["delta"])


def test_analytical_with_system_over_enclosure():
    Z = Box([(-11, 11), (-11, 8), (0, 20)])
    r = analytical_delta([cert()], Z, 6.0, [1.0], [Interval(1.0, 5.0)], system=rossler())
    assert r.delta_certified > 0
    assert r.L > 0
    assert r.per_relation[0]["t"] > 6.0


def test_analytical_errors():
    with pytest.raises(ZeroMargin):
        analytical_delta([cert((0.0, 0.1, 0.1))], Box.point([0.0] * 3), 1.0, [1.0], [Interval.point(1.0)], L=1.0, speed=1.0)
    with pytest.raises(MissingEnclosureData):
        global_enclosure([cert()])


def test_global_enclosure_hull():
    a = cert(enclosure=Box([(0, 1), (0, 1), (0, 1)]))
    b = cert(enclosure=Box([(-1, 0.5), (2, 3), (0, 1)]))
    assert global_enclosure([a, b]) == Box([(-1, 1), (0, 3), (0, 1)])


def test_bisect_finds_threshold():
    thr = 0.0123
    d, trace = bisect_delta(lambda x: x <= thr, (0.0, 0.05), 20)
    assert d <= thr and thr - d < 0.05 / 2**19
    assert trace[0] == (0.0, True) and trace[1] == (0.05, False)
    assert all(ok == (x <= thr) for x, ok in trace)


def test_bisect_edge_cases():
    assert bisect_delta(lambda x: True, (0.0, 0.05), 5)[0] == 0.05
    with pytest.raises(NeverVerified):
        bisect_delta(lambda x: False, (0.0, 0.05), 5)
    with pytest.raises(ValueError):
        bisect_delta(lambda x: True, (0.05, 0.0), 5)


def test_computational_search_with_verifier():
    r = computational_delta_search(None, None, [], [], bracket=(0.0, 1.0), iters=10, verifier=lambda d: d < 0.3)
    assert r.mode == "computational"
    assert 0.29 < r.delta_certified < 0.3


def test_inclusion_flow_zero_field():
    fe = inclusion_flow(zero_field(3), Box.point([0.0, 0.0, 0.0]), 0.1, 1.0)
    for c in fe.at_time:
        assert c.contains(0.1) and c.contains(-0.1)
        assert c.width < 0.2 + 1e-12


def test_inclusion_flow_contains_perturbed_solutions():
    d, t = 0.01, 2.0
    fe = inclusion_flow(linear_decay(1), Box.point([1.0]), d, t)
    for w in (0.0, 1.0, 3.0):
        # x' = -x + d cos(w t), x(0) = 1, in closed form
        for sgn in (1, -1):
            x = math.exp(-t) + sgn * d * (math.cos(w * t) + w * math.sin(w * t) - math.exp(-t)) / (1 + w * w)
            assert fe.at_time[0].contains(x)
    with pytest.raises(ValueError):
        inclusion_flow(zero_field(1), Box.point([0.0]), -1.0, 1.0)
