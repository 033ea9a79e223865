"""Brouwer degree of planar maps, as test oracles.

``affine_degree`` is the closed form for affine maps; ``winding_degree``
counts how often ``f - c`` winds around the origin along the boundary of a
rectangle.  Neither is rigorous: they check the covering code from outside.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "BoundarySolution",
    "TargetOnBoundaryImage",
    "affine_degree",
    "winding_degree",
    "boundary_points",
    "covering_degree",
]


class BoundarySolution(ValueError):
    pass


class TargetOnBoundaryImage(ValueError):
    pass


def _rect(D):
    (x0, x1), (y0, y1) = [(float(a), float(b)) for a, b in D]
    return x0, x1, y0, y1


def affine_degree(B, x0, D, c=(0.0, 0.0)) -> int:
    """Degree of ``x -> B (x - x0) + c`` on ``D`` at ``c``.

    The only preimage of ``c`` is ``x0``, so the degree is ``sgn det B`` when
    ``x0`` lies inside ``D`` and 0 when it lies outside.
    """
    B = np.asarray(B, dtype=float)
    det = float(np.linalg.det(B))
    if det == 0.0:
        raise np.linalg.LinAlgError("affine map is singular")
    x, y = (float(v) for v in x0)
    a, b, lo, hi = _rect(D)
    if a < x < b and lo < y < hi:
        return 1 if det > 0 else -1
    if a <= x <= b and lo <= y <= hi:
        raise BoundarySolution(f"preimage {(x, y)} lies on the boundary of D")
    return 0


def boundary_points(D, n: int) -> np.ndarray:
    """``n`` points walking counterclockwise around the rectangle ``D``."""
    x0, x1, y0, y1 = _rect(D)
    w, h = x1 - x0, y1 - y0
    per = 2 * (w + h)
    s = np.arange(n) * per / n
    pts = np.empty((n, 2))
    for k, si in enumerate(s):
        if si < w:
            pts[k] = x0 + si, y0
        elif si < w + h:
            pts[k] = x1, y0 + (si - w)
        elif si < 2 * w + h:
            pts[k] = x1 - (si - w - h), y1
        else:
            pts[k] = x0, y1 - (si - 2 * w - h)
    return pts


def _eval(f, pts):
    # vectorised maps accept (n, 2); plain callables are evaluated pointwise
    try:
        out = np.asarray(f(pts), dtype=float)
        if out.shape == pts.shape:
            return out
    except Exception:
        pass
    return np.array([np.asarray(f(p), dtype=float) for p in pts])


def winding_degree(f, D, c=(0.0, 0.0), boundary_samples: int = 4096) -> int:
    """Winding number of ``f - c`` along the boundary of ``D``.

    Raises ``TargetOnBoundaryImage`` when ``c`` comes closer to the image of
    the boundary than ten times the largest step between samples, because
    then the count cannot be trusted.
    """
    pts = boundary_points(D, boundary_samples)
    v = _eval(f, pts) - np.asarray(c, dtype=float)
    step = np.linalg.norm(np.diff(np.vstack([v, v[:1]]), axis=0), axis=1).max()
    dist = np.linalg.norm(v, axis=1).min()
    if not dist > 10 * step:
        raise TargetOnBoundaryImage(f"target within {dist:.3g} of the boundary image (sampling step {step:.3g})")
    ang = np.arctan2(v[:, 1], v[:, 0])
    d = np.diff(np.concatenate([ang, ang[:1]]))
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return int(round(d.sum() / (2 * math.pi)))


def covering_degree(chart_map, boundary_samples: int = 4096) -> int:
    """Degree at 0 of ``(p, q) -> (f_u(p, q), q - f_s(p, q))`` on ``[-1, 1]^2``.

    ``chart_map`` takes ``(n, 2)`` chart points of the source and returns the
    image in the target chart.  For a covering relation this equals its
    orientation.
    """

    def phi(pq):
        fu = chart_map(pq)
        return np.column_stack([fu[:, 0], pq[:, 1] - fu[:, 1]])

    return winding_degree(phi, ((-1.0, 1.0), (-1.0, 1.0)), (0.0, 0.0), boundary_samples)
