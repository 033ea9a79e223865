import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covrel.covering import (
    LEMMA_PATTERN,
    DegenerateChart,
    HSet,
    Subdivision,
    affine_section_map,
    check_covering,
    edges,
    pieces,
    verify_relations,
)
from covrel.covering import _section_geometry
from covrel.interval import IArray

UNIT = HSet("U", (0.0, 0.0), (1.0, 0.0), (0.0, 1.0))


def toy(A, N=UNIT, M=UNIT, sub=8, b=(0.0, 0.0)):
    return check_covering(None, None, N, M, subdivision=sub, section_map=affine_section_map(A, b))


def test_expanding_map_covers():
    c = toy([[3.0, 0.0], [0.0, 0.5]])
    assert c.verified and c.orientation == 1
    assert c.margin_left == pytest.approx(2.0) and c.margin_right == pytest.approx(2.0)
    assert c.margin_stable == pytest.approx(0.5)
    # margins are rounded outward, i.e. never overstated
    assert c.margin_left <= 2.0 and c.margin_stable <= 0.5


def test_flipped_map_has_negative_orientation():
    c = toy([[-3.0, 0.0], [0.0, 0.5]])
    assert c.verified and c.orientation == -1


def test_contracting_map_fails():
    c = toy([[0.5, 0.0], [0.0, 0.5]])
    assert not c.verified
    assert c.failures
    assert c.failures == sorted(c.failures)


def test_stable_overflow_fails():
    c = toy([[3.0, 0.0], [0.0, 1.5]])
    assert not c.verified


def test_shift_breaks_covering():
    c = toy([[3.0, 0.0], [0.0, 0.5]], b=(2.5, 0.0))
    assert not c.verified


def test_covering_between_different_charts():
    N = HSet("N", (1.0, 2.0), (2.0, 0.0), (0.0, 0.1))
    M = HSet("M", (1.0, 2.0), (1.0, 0.0), (0.1, 0.3))
    # section map expands along x and contracts along y around (1, 2)
    A = np.array([[2.0, 0.0], [0.0, 0.5]])
    b = np.array([1.0, 2.0]) - A @ np.array([1.0, 2.0])
    c = toy(A, N, M, sub=16, b=b)
    assert c.verified and c.orientation == 1


@settings(max_examples=40, deadline=None)
@given(st.floats(1.3, 6.0), st.floats(0.0, 0.7), st.sampled_from([1, -1]), st.sampled_from([1, -1]))
def test_diagonal_maps(lam, mu, s1, s2):
    c = toy([[s1 * lam, 0.0], [0.0, s2 * mu]], sub=4)
    assert c.verified
    assert c.orientation == s1
    assert min(c.margins.values()) > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 0.95), st.floats(0.0, 0.7))
def test_weak_expansion_never_covers(lam, mu):
    assert not toy([[lam, 0.0], [0.0, mu]], sub=4).verified


def test_degenerate_chart():
    with pytest.raises(DegenerateChart):
        HSet("bad", (0.0, 0.0), (1.0, 1.0), (2.0, 2.0))
    with pytest.raises(DegenerateChart):
        HSet("bad", (0.0, float("nan")), (1.0, 0.0), (0.0, 1.0))


def test_chart_roundtrip():
    N = HSet("N", (-8.0, 0.03), (1.02, 0.0005), (0.0, 0.00084))
    rng = np.random.default_rng(0)
    pq = rng.uniform(-1, 1, (20, 2))
    assert np.allclose(N.chart(N.inverse_chart(pq)), pq)
    assert np.all(N.chart_enclosure().contains(np.linalg.inv(N.M)))


def test_subdivision_coerce():
    assert Subdivision.coerce(None) == Subdivision(64, 8, 256)
    assert Subdivision.coerce(4) == Subdivision(4, 4, 4)
    assert Subdivision.coerce([2, 3, 5]) == (2, 3, 5)
    with pytest.raises(ValueError):
        Subdivision.coerce(0)


def test_pieces_cover_the_hset():
    N = HSet("N", (-8.0, 0.03), (1.02, 0.0005), (0.0, 0.00084))
    pc = pieces(N, (4, 3, 5))
    assert pc.n == 4 * 3 + 2 * 5
    centers, G, r0 = _section_geometry(N, pc.p, pc.q)
    rng = np.random.default_rng(1)
    box = pc.kind == 0
    # every chart point of a box piece lies in its section set
    for j in np.flatnonzero(box):
        for _ in range(5):
            p = rng.uniform(pc.p.lo[j], pc.p.hi[j])
            q = rng.uniform(pc.q.lo[j], pc.q.hi[j])
            x = N.inverse_chart([p, q])
            r = np.linalg.solve(G[j], x - centers.mid()[j])
            assert np.all(np.abs(r) <= 1 + 1e-9) or np.all(centers[j].inflate(1e-12).contains(x - G[j] @ np.clip(r, -1, 1)))
    # box pieces tile [-1, 1]^2
    area = np.sum((pc.p.hi - pc.p.lo)[box] * (pc.q.hi - pc.q.lo)[box])
    assert area == pytest.approx(4.0)


def test_edges_contain_corners():
    N = HSet("N", (1.0, 2.0), (0.5, 0.1), (0.0, 0.5))
    left, right, bottom, top = edges(N)
    assert left.contains(N.inverse_chart([-1.0, 0.3]))
    assert right.contains(N.inverse_chart([1.0, -0.9]))
    assert bottom.contains(N.inverse_chart([0.2, -1.0]))
    assert top.contains(N.inverse_chart([-0.7, 1.0]))


def test_verify_relations_with_toy_map():
    hs = [UNIT, UNIT]
    certs = verify_relations(None, None, hs, [(0, 1), (1, 0)], subdivision=4, section_map=affine_section_map([[2.0, 0.0], [0.0, 0.3]]))
    assert [c.verified for c in certs] == [True, True]


def test_committed_hsets_are_valid():
    from importlib import resources

    cfg = json.loads((resources.files("covrel") / "data" / "rossler.json").read_text())
    names = [h["name"] for h in cfg["hsets"]]
    hs = [HSet(h["name"], h["center"], h["u_dir"], h["s_dir"]) for h in cfg["hsets"]]
    assert len(hs) == 3
    rel = [(names.index(a), names.index(b)) for a, b in cfg["relations"]]
    assert tuple(rel) == LEMMA_PATTERN
