"""h-sets on a Poincaré section and covering relations between them.

Only one unstable and one stable direction are handled.  An h-set ``N`` is the
parallelogram ``center + p*u_dir + q*s_dir`` with ``(p, q)`` in ``[-1, 1]^2``;
its chart is ``c_N(x) = M^-1 (x - center)`` with ``M = [u_dir | s_dir]``.

``N => M`` is verified by the usual sufficient conditions:

* C1: the image of every piece of ``N`` has ``|q| < 1`` in ``M``'s chart;
* C2: the images of the left edge (``p = -1``) lie at ``p < -1`` and those of
  the right edge at ``p > 1`` (orientation +1), or the other way round
  (orientation -1).
"""

from __future__ import annotations

import math
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .integrator import IntegratorConfig
from .interval import Box, IArray, Interval, imatmul, point_inverse_enclosure
from .poincare import PoincareError, Section, poincare_batch, section_set

__all__ = [
    "HSet",
    "DegenerateChart",
    "InsufficientCrossings",
    "Subdivision",
    "CoveringCertificate",
    "Pieces",
    "edges",
    "pieces",
    "map_pieces",
    "evaluate_covering",
    "check_covering",
    "verify_relations",
    "explore",
    "LEMMA_PATTERN",
]

# the covering pattern N0=>N2, N1=>N0, N1=>N1, N2=>N0, N2=>N1
LEMMA_PATTERN = ((0, 2), (1, 0), (1, 1), (2, 0), (2, 1))

CHUNK = 128  # pieces per integrator batch; fixed so results never depend on --threads
DET_MIN = 1e-12


class DegenerateChart(ValueError):
    pass


class InsufficientCrossings(RuntimeError):
    pass


@dataclass(frozen=True)
class HSet:
    name: str
    center: tuple
    u_dir: tuple
    s_dir: tuple

    def __post_init__(self):
        for key in ("center", "u_dir", "s_dir"):
            v = tuple(float(x) for x in getattr(self, key))
            if len(v) != 2 or not all(math.isfinite(x) for x in v):
                raise DegenerateChart(f"h-set {self.name}: {key} must be two finite numbers")
            object.__setattr__(self, key, v)
        if abs(self.det) <= DET_MIN:
            raise DegenerateChart(f"h-set {self.name}: u_dir and s_dir are (nearly) parallel, det={self.det:.3g}")

    @property
    def det(self) -> float:
        (a, c), (b, d) = self.u_dir, self.s_dir
        return a * d - b * c

    @property
    def M(self) -> np.ndarray:
        return np.array([[self.u_dir[0], self.s_dir[0]], [self.u_dir[1], self.s_dir[1]]])

    def chart(self, x) -> np.ndarray:
        """Float chart coordinates ``(p, q)`` of section point(s) ``x``."""
        x = np.asarray(x, dtype=float)
        return np.linalg.solve(self.M, (x - np.asarray(self.center)).T).T

    def inverse_chart(self, pq) -> np.ndarray:
        pq = np.asarray(pq, dtype=float)
        return np.asarray(self.center) + pq @ self.M.T

    def chart_enclosure(self) -> IArray:
        """Interval matrix containing the exact ``M^-1``."""
        return point_inverse_enclosure(self.M)

    def contains_interior(self, x) -> bool:
        p, q = self.chart(x)
        return abs(p) < 1 and abs(q) < 1

    def to_dict(self) -> dict:
        return {"name": self.name, "center": list(self.center), "u_dir": list(self.u_dir), "s_dir": list(self.s_dir)}


def edges(N: HSet):
    """``(left, right, bottom, top)`` edges as boxes in section coordinates.

    left/right are ``p = -1, +1`` (the exit set), bottom/top ``q = -1, +1``.
    Each box is the outward hull of its segment, exact for axis-aligned charts.
    """
    c = IArray(np.array(N.center))
    u = IArray(np.array(N.u_dir))
    s = IArray(np.array(N.s_dir))
    one = IArray(-1.0, 1.0)
    left = c - u + s * one
    right = c + u + s * one
    bottom = c - s + u * one
    top = c + s + u * one
    return tuple(Box.from_iarray(e) for e in (left, right, bottom, top))


class Subdivision(NamedTuple):
    unstable: int = 64
    stable: int = 8
    edge: int = 256

    @classmethod
    def coerce(cls, k) -> "Subdivision":
        if k is None:
            return cls()
        if isinstance(k, cls):
            out = k
        elif isinstance(k, (int, np.integer)):
            out = cls(int(k), int(k), int(k))
        else:
            out = cls(*(int(v) for v in k))
        if min(out) < 1:
            raise ValueError("subdivision counts must be >= 1")
        return out


@dataclass
class Pieces:
    """Chart boxes ``[p0,p1] x [q0,q1]`` of one h-set, in a fixed order.

    ``kind`` is 0 for full sub-boxes, 1 for left-edge and 2 for right-edge
    segments.
    """

    hset: HSet
    sub: Subdivision
    p: IArray  # (n,)
    q: IArray  # (n,)
    kind: np.ndarray

    @property
    def n(self) -> int:
        return len(self.kind)


def _grid(k: int) -> np.ndarray:
    # endpoints -1 + 2j/k; exact for power-of-two k, else hull keeps them covering
    return -1.0 + 2.0 * np.arange(k + 1) / k


def pieces(N: HSet, sub=None) -> Pieces:
    sub = Subdivision.coerce(sub)
    gp, gq, ge = _grid(sub.unstable), _grid(sub.stable), _grid(sub.edge)
    # consecutive cells share their float endpoints, so the union is [-1,1]^2
    P0, Q0 = np.meshgrid(gp[:-1], gq[:-1], indexing="ij")
    P1, Q1 = np.meshgrid(gp[1:], gq[1:], indexing="ij")
    p_lo = [P0.ravel(), np.full(sub.edge, -1.0), np.full(sub.edge, 1.0)]
    p_hi = [P1.ravel(), np.full(sub.edge, -1.0), np.full(sub.edge, 1.0)]
    q_lo = [Q0.ravel(), ge[:-1], ge[:-1]]
    q_hi = [Q1.ravel(), ge[1:], ge[1:]]
    kind = np.concatenate([np.zeros(P0.size, int), np.ones(sub.edge, int), np.full(sub.edge, 2)])
    p = IArray(np.concatenate(p_lo), np.concatenate(p_hi))
    q = IArray(np.concatenate(q_lo), np.concatenate(q_hi))
    return Pieces(N, sub, p, q, kind)


def _section_geometry(N: HSet, p: IArray, q: IArray):
    """Centers (interval), float generators and ``r0`` so that the pieces lie in
    ``center + G r0``.  Rounding in ``G`` is moved into the centre interval."""
    n = len(p.lo)
    c = IArray(np.array(N.center))
    u = IArray(np.array(N.u_dir))
    s = IArray(np.array(N.s_dir))
    pm, qm = p.mid(), q.mid()
    pr = (p - pm).mag()
    qr = (q - qm).mag()
    centers = c[None, :] + IArray(pm)[:, None] * u[None, :] + IArray(qm)[:, None] * s[None, :]
    Gi = IArray(np.zeros((n, 2, 2)))
    col_u = IArray(pr)[:, None] * u[None, :]
    col_s = IArray(qr)[:, None] * s[None, :]
    Gi.lo[:, :, 0], Gi.hi[:, :, 0] = col_u.lo, col_u.hi
    Gi.lo[:, :, 1], Gi.hi[:, :, 1] = col_s.lo, col_s.hi
    G = Gi.mid()
    slack = (Gi - G).mag().sum(axis=-1)
    slack = np.nextafter(slack * (1 + 1e-14), np.inf)
    centers = centers.inflate(slack)
    r0 = IArray(-np.ones((n, 2)), np.ones((n, 2)))
    return centers, G, r0


# ---------------------------------------------------------------------------
# mapping


class _Job(NamedTuple):
    system: object
    section: Section
    centers: IArray
    gens: np.ndarray
    r0: IArray
    cfg: IntegratorConfig
    delta: float
    t_escape: float


_JOB: _Job | None = None


def _run_chunk(bounds):
    lo, hi = bounds
    job = _JOB
    S = section_set(job.section, job.centers[lo:hi], job.gens[lo:hi], job.r0[lo:hi])
    return poincare_batch(job.system, job.section, S, job.cfg, job.t_escape, job.delta)


def map_pieces(system, section: Section, pc: Pieces, cfg=None, delta: float = 0.0, threads: int = 1, t_escape: float = 20.0):
    """Rigorous Poincaré images of every piece (list of image or error)."""
    global _JOB
    cfg = cfg or IntegratorConfig()
    centers, G, r0 = _section_geometry(pc.hset, pc.p, pc.q)
    _JOB = _Job(system, section, centers, G, r0, cfg, float(delta), t_escape)
    chunks = [(a, min(a + CHUNK, pc.n)) for a in range(0, pc.n, CHUNK)]
    try:
        if threads > 1 and len(chunks) > 1 and "fork" in mp.get_all_start_methods():
            with ProcessPoolExecutor(max_workers=threads, mp_context=mp.get_context("fork")) as ex:
                parts = list(ex.map(_run_chunk, chunks))
        else:
            parts = [_run_chunk(b) for b in chunks]
    finally:
        _JOB = None
    return [r for part in parts for r in part]


# ---------------------------------------------------------------------------
# certificates


@dataclass
class CoveringCertificate:
    source: str
    target: str
    verified: bool
    orientation: int
    margin_left: float
    margin_right: float
    margin_stable: float
    return_time: Interval | None
    subdivision: Subdivision
    failures: list = field(default_factory=list)
    enclosure: Box | None = None  # hull of all connecting trajectory pieces
    transversality: Interval | None = None

    @property
    def margins(self) -> dict:
        return {"left": self.margin_left, "right": self.margin_right, "stable": self.margin_stable}


def _lo(x) -> float:
    return float(np.min(x)) if np.size(x) else math.inf


def evaluate_covering(pc: Pieces, results, M: HSet) -> CoveringCertificate:
    """Turn per-piece images (section coordinates) into a certificate for ``N => M``."""
    Minv = M.chart_enclosure()
    cM = IArray(np.array(M.center))
    P = np.full((pc.n, 2), np.nan)
    Q = np.full((pc.n, 2), np.nan)
    failures = []
    rt = None
    enc = None
    trans = None
    ok = np.zeros(pc.n, dtype=bool)
    for j, res in enumerate(results):
        if isinstance(res, Exception):
            failures.append((j, type(res).__name__))
            continue
        ok[j] = True
        if res.affine is not None:
            ch = res.affine.transform(Minv, cM).hull()
        else:
            ch = imatmul(Minv, IArray.coerce(res.image) - cM)
        # hull of affine form and of the plain box, intersected, is still valid
        ch2 = imatmul(Minv, IArray.coerce(res.image) - cM)
        ch, _ = ch.intersect(ch2)
        P[j] = ch.lo[0], ch.hi[0]
        Q[j] = ch.lo[1], ch.hi[1]
        if pc.kind[j] == 0:
            rt = res.return_time if rt is None else rt.hull(res.return_time)
            trans = res.transversality if trans is None else trans.hull(res.transversality)
        if res.over_interval is not None:
            oi = IArray.coerce(res.over_interval)
            enc = oi if enc is None else enc.hull(oi)

    one = IArray(1.0)
    boxes = ok & (pc.kind == 0)
    qmag = np.maximum(np.abs(Q[:, 0]), np.abs(Q[:, 1]))
    bad_c1 = boxes & ~(qmag < 1.0)
    m_stable = _lo((one - IArray(qmag[boxes])).lo) if boxes.any() else -math.inf

    left = ok & (pc.kind == 1)
    right = ok & (pc.kind == 2)
    # orientation +1: left images at p < -1, right at p > 1
    mp_l = _lo((-one - IArray(P[left, 1])).lo)
    mp_r = _lo((IArray(P[right, 0]) - one).lo)
    # orientation -1: left images at p > 1, right at p < -1
    mn_l = _lo((IArray(P[left, 0]) - one).lo)
    mn_r = _lo((-one - IArray(P[right, 1])).lo)
    if min(mp_l, mp_r) >= min(mn_l, mn_r):
        orientation, m_left, m_right = 1, mp_l, mp_r
        bad_l = left & ~(P[:, 1] < -1.0)
        bad_r = right & ~(P[:, 0] > 1.0)
    else:
        orientation, m_left, m_right = -1, mn_l, mn_r
        bad_l = left & ~(P[:, 0] > 1.0)
        bad_r = right & ~(P[:, 1] < -1.0)
    if not left.any():
        m_left = -math.inf
    if not right.any():
        m_right = -math.inf
    for j in np.nonzero(bad_c1)[0]:
        failures.append((int(j), "C1"))
    for j in np.nonzero(bad_l)[0]:
        failures.append((int(j), "C2-left"))
    for j in np.nonzero(bad_r)[0]:
        failures.append((int(j), "C2-right"))
    failures.sort()
    verified = not failures and m_left > 0 and m_right > 0 and m_stable > 0
    tr = None
    if trans is not None:
        tr = trans
    return CoveringCertificate(
        pc.hset.name,
        M.name,
        bool(verified),
        orientation,
        float(m_left),
        float(m_right),
        float(m_stable),
        rt,
        pc.sub,
        failures,
        None if enc is None else Box.from_iarray(enc),
        tr,
    )


MapFn = Callable[[Pieces], list]


def check_covering(
    system,
    section: Section,
    N: HSet,
    M: HSet,
    cfg=None,
    subdivision=None,
    section_map: MapFn | None = None,
    delta: float = 0.0,
    threads: int = 1,
) -> CoveringCertificate:
    """Verify ``N => M``.  ``section_map`` replaces the Poincaré map when given
    (it receives the ``Pieces`` and returns one image or error per piece)."""
    pc = pieces(N, subdivision)
    if section_map is None:
        results = map_pieces(system, section, pc, cfg, delta, threads)
    else:
        results = section_map(pc)
    return evaluate_covering(pc, results, M)


def verify_relations(system, section, hsets, relations, cfg=None, subdivision=None, delta=0.0, threads=1, section_map=None):
    """Certificates for ``relations`` (pairs of indices into ``hsets``).

    Images of each source are computed once and reused for all its targets.
    """
    certs = []
    cache = {}
    for i, j in relations:
        if i not in cache:
            pc = pieces(hsets[i], subdivision)
            res = section_map(pc) if section_map else map_pieces(system, section, pc, cfg, delta, threads)
            cache[i] = (pc, res)
        pc, res = cache[i]
        certs.append(evaluate_covering(pc, res, hsets[j]))
    return certs


def affine_section_map(A, b=(0.0, 0.0)) -> MapFn:
    """Exact interval image of pieces under the section map ``x -> A x + b``.

    Used to test the checker with closed-form maps.
    """
    from .poincare import AffineImage, PoincareImage

    A = np.asarray(A, dtype=float)
    b = IArray(np.asarray(b, dtype=float))

    def fn(pc: Pieces):
        centers, G, r0 = _section_geometry(pc.hset, pc.p, pc.q)
        out = []
        for j in range(pc.n):
            aff = AffineImage(imatmul(IArray(A), centers[j]) + b, [(imatmul(IArray(A), IArray(G[j])), r0[j])])
            out.append(PoincareImage(Box.from_iarray(aff.hull()), Interval.point(1.0), Interval.point(1.0), aff))
        return out

    return fn


# ---------------------------------------------------------------------------
# non-rigorous explorer


def simulate_crossings(system, section: Section, x0, t_end: float, transient: float = 50.0, rtol: float = 1e-10):
    """Section crossings of one long float trajectory (scipy DOP853, events)."""
    from scipy.integrate import solve_ivp

    i = section.coord_index
    c = float(section.value)

    def rhs(t, u):
        return system.field_float(u)

    def ev(t, u):
        return (u[i] - c) * section.crossing_sign

    ev.direction = 1
    if t_end <= 0:
        return np.zeros((0, section.dim))
    sol = solve_ivp(rhs, (0.0, t_end), np.asarray(x0, float), method="DOP853", rtol=rtol, atol=rtol * 1e-2, events=ev)
    pts = sol.y_events[0]
    ts = sol.t_events[0]
    keep = ts > transient
    pts = pts[keep]
    ok = np.array([section.satisfied(IArray(p[None, :]))[0] for p in pts], dtype=bool) if len(pts) else np.zeros(0, bool)
    return pts[ok]


def explore(system, section: Section, cfg=None, t_sim: float = 3000.0, x0=(0.0, -5.0, 0.02), pattern=LEMMA_PATTERN, seed: int = 0, names=None) -> list:
    """Propose three h-sets realising ``pattern`` (non-rigorous pilot).

    The crossings of a long simulation lie close to a curve.  A least squares
    line through them gives the unstable direction; the stable direction is
    transverse, sized from the spread about the line.  Interval positions
    along the line come from a random search on the 1-D return map, scored by
    how far each image overshoots its targets.
    """
    pts = simulate_crossings(system, section, x0, t_sim)
    if len(pts) < 100:
        raise InsufficientCrossings(f"only {len(pts)} section crossings (need 100)")
    free = list(section.free)
    w = pts[:, free]  # (m, 2) section coords
    y, z = w[:, 0], w[:, 1]
    slope, icpt = np.polyfit(y, z, 1)
    resid = z - (slope * y + icpt)
    thick = 4.0 * float(np.max(np.abs(resid))) + 1e-4

    ys, ny = y[:-1], y[1:]
    o = np.argsort(ys)
    ys, ny = ys[o], ny[o]
    lo, hi = ys[0], ys[-1]
    turn = ys[np.argmin(ny)] if np.ptp(ny) > 0 else 0.5 * (lo + hi)

    def f(v):
        return np.interp(v, ys, ny)

    k = 1 + max(max(a, b) for a, b in pattern)
    g = np.linspace(0.0, 1.0, 64)

    def score(v):
        N = np.sort(v.reshape(k, 2), axis=1)
        if np.any(N[:, 0] <= lo) or np.any(N[:, 1] >= hi):
            return -np.inf
        if np.any((N[:, 0] < turn) & (turn < N[:, 1])):
            return -np.inf
        srt = N[np.argsort(N[:, 0])]
        if np.any(srt[1:, 0] <= srt[:-1, 1]):
            return -np.inf
        best = np.inf
        for a, b in pattern:
            im = f(N[a, 0] + g * (N[a, 1] - N[a, 0]))
            e = np.sort(im[[0, -1]])
            best = min(best, N[b, 0] - e[0], e[1] - N[b, 1])
        return best

    rng = np.random.default_rng(seed)
    v_best, s_best = None, -np.inf
    for _ in range(20000):
        v = rng.uniform(lo, hi, 2 * k)
        s = score(v)
        if s > s_best:
            v_best, s_best = v, s
    if v_best is None:
        raise InsufficientCrossings("no admissible arrangement of h-sets found")
    for scale in (0.05, 0.02, 0.005):
        for _ in range(4000):
            v = v_best + rng.normal(0.0, scale, 2 * k)
            s = score(v)
            if s > s_best:
                v_best, s_best = v, s
    N = np.sort(v_best.reshape(k, 2), axis=1)
    names = names or [f"N{j}" for j in range(k)]
    out = []
    for j in range(k):
        ym = 0.5 * (N[j, 0] + N[j, 1])
        half = 0.5 * (N[j, 1] - N[j, 0])
        out.append(HSet(names[j], (ym, slope * ym + icpt), (half, slope * half), (0.0, thick)))
    return out
