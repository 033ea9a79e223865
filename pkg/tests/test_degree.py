import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covrel.covering import HSet, affine_section_map, check_covering
from covrel.degree import BoundarySolution, TargetOnBoundaryImage, affine_degree, boundary_points, covering_degree, winding_degree

D = ((-1.0, 1.0), (-1.0, 1.0))


def affine(B, x0, c):
    B = np.asarray(B, float)
    return lambda x: (np.atleast_2d(x) - x0) @ B.T + c


def random_affine(rng):
    while True:
        B = rng.normal(size=(2, 2))
        if abs(np.linalg.det(B)) > 0.2 and np.linalg.cond(B) < 20:
            break
    x0 = rng.uniform(-2, 2, 2)
    # keep the preimage clear of the boundary so the sampled oracle applies
    if np.min(np.abs(np.abs(x0) - 1)) < 0.1:
        x0 = x0 * 0.5
    return B, x0, rng.uniform(-1, 1, 2)


def test_fifty_random_affine_maps_agree():
    rng = np.random.default_rng(0)
    done = 0
    while done < 50:
        B, x0, c = random_affine(rng)
        try:
            w = winding_degree(affine(B, x0, c), D, c)
        except TargetOnBoundaryImage:
            continue
        assert w == affine_degree(B, x0, D, c)
        done += 1


def test_identity_and_reflection():
    assert winding_degree(lambda x: x, D) == 1
    assert winding_degree(lambda x: x * [1.0, -1.0], D) == -1
    assert affine_degree(np.eye(2), (0.0, 0.0), D) == 1
    assert affine_degree(np.diag([1.0, -1.0]), (0.0, 0.0), D) == -1
    assert affine_degree(np.eye(2), (3.0, 0.0), D) == 0
    assert winding_degree(lambda x: x - [3.0, 0.0], D) == 0


def test_square_map_has_degree_two():
    def sq(x):
        z = x[:, 0] + 1j * x[:, 1]
        w = z * z
        return np.column_stack([w.real, w.imag])

    assert winding_degree(sq, D) == 2


def test_errors():
    with pytest.raises(BoundarySolution):
        affine_degree(np.eye(2), (1.0, 0.0), D)
    with pytest.raises(TargetOnBoundaryImage):
        winding_degree(lambda x: x, D, (1.0, 0.0))
    with pytest.raises(np.linalg.LinAlgError):
        affine_degree(np.zeros((2, 2)), (0.0, 0.0), D)


def test_boundary_walk():
    pts = boundary_points(D, 8)
    assert pts.shape == (8, 2)
    assert np.all(np.max(np.abs(pts), axis=1) == 1.0)


@pytest.mark.parametrize("A", [[[3.0, 0.0], [0.0, 0.5]], [[-3.0, 0.0], [0.0, 0.5]], [[2.5, 0.3], [0.1, -0.4]], [[-2.0, 0.1], [0.2, 0.3]]])
def test_covering_degree_matches_orientation(A):
    U = HSet("U", (0.0, 0.0), (1.0, 0.0), (0.0, 1.0))
    c = check_covering(None, None, U, U, subdivision=16, section_map=affine_section_map(A))
    assert c.verified
    A = np.asarray(A)
    assert covering_degree(lambda pq: pq @ A.T) == c.orientation


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_affine_oracle_property(a, b, c, d, x, y):
    B = np.array([[a, b], [c, d]])
    if abs(np.linalg.det(B)) < 0.1 or np.linalg.cond(B) > 30 or min(abs(abs(x) - 1), abs(abs(y) - 1)) < 0.05:
        return
    try:
        w = winding_degree(affine(B, np.array([x, y]), 0.0), D, (0.0, 0.0))
    except TargetOnBoundaryImage:
        return
    assert w == affine_degree(B, (x, y), D)
