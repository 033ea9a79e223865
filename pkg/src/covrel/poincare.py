"""Rigorous Poincaré maps on coordinate hyperplane sections.

A set that starts on the section is pushed off it by one verified step
(detachment), then integrated while the over-interval enclosures are
watched.  The crossing window is the run of steps whose enclosures may meet
the section; it must be transversal.  Inside the window the image is
obtained by flowing each point along the vector field onto the section,

    P_j(u) = u_j - (u_i - c) * f_j(E) / f_i(E),

which is affine in ``u`` for fixed interval ratios, so the doubleton
structure survives all the way into section (and later chart) coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .integrator import (
    IntegratorConfig,
    LohnerSet,
    StepTooLarge,
    WidthBlowup,
    _Stepper,
)
from .interval import Box, IArray, Interval, imatmul, pmatmul

__all__ = [
    "Section",
    "PoincareImage",
    "AffineImage",
    "PoincareError",
    "NotOnSection",
    "NoCrossingBeforeEscape",
    "TransversalityFailure",
    "SectionConstraintViolated",
    "EmptyInput",
    "rossler_section",
    "embed",
    "project",
    "poincare_map",
    "poincare_batch",
    "return_time_hull",
]


class PoincareError(RuntimeError):
    pass


class NotOnSection(PoincareError):
    pass


class NoCrossingBeforeEscape(PoincareError):
    pass


class TransversalityFailure(PoincareError):
    pass


class SectionConstraintViolated(PoincareError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class Section:
    """Hyperplane ``u[coord_index] = value`` crossed with the given sign.

    ``constraints`` are strict half-space conditions ``(index, "<"|">", v)``
    on the ambient coordinates that cut the section down.
    """

    coord_index: int = 0
    value: float = 0.0
    crossing_sign: int = 1
    constraints: tuple = ((1, "<", 0.0),)
    dim: int = 3

    def __post_init__(self):
        if self.crossing_sign not in (1, -1):
            raise ValueError("crossing_sign must be +1 or -1")
        for idx, rel, _ in self.constraints:
            if rel not in ("<", ">") or not 0 <= idx < self.dim:
                raise ValueError(f"bad constraint {(idx, rel)}")

    @property
    def free(self) -> tuple:
        return tuple(i for i in range(self.dim) if i != self.coord_index)

    def satisfied(self, box: IArray) -> np.ndarray:
        """Strictly satisfied everywhere on ambient boxes ``(..., dim)``."""
        ok = np.ones(box.shape[:-1], dtype=bool)
        for idx, rel, v in self.constraints:
            ok &= box.hi[..., idx] < v if rel == "<" else box.lo[..., idx] > v
        return ok

    def violated(self, box: IArray) -> np.ndarray:
        """Some constraint fails everywhere on the box."""
        bad = np.zeros(box.shape[:-1], dtype=bool)
        for idx, rel, v in self.constraints:
            bad |= box.lo[..., idx] >= v if rel == "<" else box.hi[..., idx] <= v
        return bad


def rossler_section() -> Section:
    return Section(0, 0.0, 1, ((1, "<", 0.0),), 3)


def embed(section: Section, p) -> Box:
    p = list(p)
    if len(p) != section.dim - 1:
        raise ValueError(f"section point needs {section.dim - 1} coordinates")
    comps = [None] * section.dim
    comps[section.coord_index] = Interval.point(section.value)
    for j, c in zip(section.free, p):
        comps[j] = c if isinstance(c, Interval) else Interval.point(c)
    return Box(comps)


def project(section: Section, B) -> Box:
    B = Box(B)
    fixed = B[section.coord_index]
    if not (fixed.lo == fixed.hi == section.value):
        raise NotOnSection(f"coordinate {section.coord_index} is {fixed}, section value is {section.value}")
    return Box(B[j] for j in section.free)


@dataclass
class AffineImage:
    """``center + sum_k G_k r_k`` in section coordinates (interval pieces)."""

    center: IArray  # (k,)
    gens: list  # [(IArray (k, m), IArray (m,))]

    def hull(self) -> IArray:
        acc = self.center
        for G, r in self.gens:
            acc = acc + imatmul(G, r)
        return acc

    def transform(self, M, offset=None) -> "AffineImage":
        """Image under ``x -> M (x - offset)`` with ``M`` an interval or float matrix."""
        c = self.center if offset is None else self.center - offset
        if isinstance(M, IArray):
            return AffineImage(imatmul(M, c), [(imatmul(M, G), r) for G, r in self.gens])
        return AffineImage(pmatmul(M, c), [(pmatmul(M, G), r) for G, r in self.gens])


@dataclass
class PoincareImage:
    image: Box
    return_time: Interval
    transversality: Interval
    affine: AffineImage | None = None
    derivative: IArray | None = None  # (k, k) enclosure of DP over the source
    over_interval: Box | None = None  # hull of the connecting trajectory
    trace: list = field(default_factory=list)  # per-step (over box, g-range) when recorded


# ---------------------------------------------------------------------------
# batched engine

_DETACH, _MONITOR, _WINDOW = 0, 1, 2


class _Record:
    __slots__ = ("data", "ids", "D")

    def __init__(self, data, ids, D):
        self.data = data
        self.ids = ids
        self.D = D


def poincare_batch(
    system,
    section: Section,
    S0: LohnerSet,
    cfg: IntegratorConfig,
    t_escape: float = 20.0,
    delta: float = 0.0,
    c1: bool = False,
    record: bool = False,
):
    """Poincaré images for every set of a batch starting on ``section``.

    Returns a list with a ``PoincareImage`` or a ``PoincareError``/integration
    error per element.  With ``c1`` the derivative of the map (w.r.t. the
    free section coordinates) is enclosed too.
    """
    n = S0.n
    d = system.dimension
    i = section.coord_index
    sign = section.crossing_sign
    c = float(section.value)
    stepper = _Stepper(system, cfg, delta, c1=c1)
    results: list = [None] * n
    phase = np.zeros(n, dtype=int)
    win_start = np.full(n, -1)
    over_hull = [None] * n
    traces = [[] for _ in range(n)] if record else None
    ids = np.arange(n)
    S = S0
    D = None
    if c1:
        eye = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        D = IArray(eye, eye.copy())
    records: dict[int, _Record] = {}
    t = 0.0
    k = 0
    while ids.size and t < t_escape and k < cfg.max_steps:
        try:
            S_new, data = stepper.step(S, t=t)
        except StepTooLarge as err:
            failed = getattr(err, "failed", np.ones(ids.size, bool))
            for e in ids[failed]:
                results[e] = StepTooLarge(str(err))
            keep = ~failed
            ids, S = ids[keep], S.take(keep)
            if D is not None:
                D = D[keep]
            if not keep.any():
                break
            continue
        Dn = None
        if c1:
            _, Jf = data.eval_at(data.h, c1=True)
            Dn = imatmul(Jf, D)
        over = data.over
        g_over = _g(over, i, c, sign)
        F = system.field_iarray(over)
        gdot = F[:, i] * sign
        if delta:
            gdot = gdot.inflate(delta)
        at = S_new.hull()
        g_end = _g(at, i, c, sign)
        for row, e in enumerate(ids):
            over_hull[e] = over[row] if over_hull[e] is None else over_hull[e].hull(over[row])
            if record:
                traces[e].append((t, data.h, Box.from_iarray(over[row]), Interval(float(g_over.lo[row]), float(g_over.hi[row]))))

        finished = np.zeros(ids.size, dtype=bool)
        # detachment
        m = phase[ids] == _DETACH
        if m.any():
            good = m & (gdot.lo > 0) & (g_end.lo > 0)
            bad = m & ~good
            for e in ids[bad]:
                results[e] = TransversalityFailure("flow does not leave the section transversally at the source")
            finished |= bad
            phase[ids[good]] = _MONITOR
        # monitoring: does a Theta crossing become possible in this step?
        m = (phase[ids] == _MONITOR) & ~(phase[ids] == _DETACH) & ~finished
        m &= _steps_done(k)
        if m.any():
            touches = (g_over.lo <= 0) & (g_over.hi >= 0)
            excluded = section.violated(over) | (gdot.hi < 0)
            cand = m & touches & ~excluded
            g_start = _g(S.hull(), i, c, sign)
            ambiguous = cand & ~(g_start.hi < 0)
            for e in ids[ambiguous]:
                results[e] = TransversalityFailure("section may be touched before the crossing window starts")
            finished |= ambiguous
            start = cand & ~ambiguous
            phase[ids[start]] = _WINDOW
            win_start[ids[start]] = k
        # window: transversality and completion
        m = (phase[ids] == _WINDOW) & ~finished
        if m.any():
            trans_bad = m & ~(gdot.lo > 0)
            for e in ids[trans_bad]:
                results[e] = TransversalityFailure("crossing-coordinate velocity may vanish on the crossing window")
            finished |= trans_bad
            done = m & ~trans_bad & (g_end.lo > 0)
        else:
            done = np.zeros(ids.size, dtype=bool)
        # width control
        wide = ~finished & ~done & (np.max(at.width(), axis=-1) > cfg.width_ceiling)
        for e in ids[wide]:
            results[e] = WidthBlowup(f"enclosure wider than {cfg.width_ceiling} at t={t:.4g}")
        finished |= wide

        if (phase[ids] == _WINDOW).any():
            records[k] = _Record(data, ids.copy(), D)

        for row in np.nonzero(done)[0]:
            e = ids[row]
            try:
                img = _image_from_window(system, section, records, win_start[e], k, e, delta, c1, Dn, row)
                img.over_interval = Box.from_iarray(over_hull[e])
                if record:
                    img.trace = traces[e]
                results[e] = img
            except PoincareError as err:
                results[e] = err
        finished |= done

        t = t + data.h
        k += 1
        keep = ~finished
        ids = ids[keep]
        S = S_new.take(keep)
        if c1:
            D = Dn[keep]
        live_starts = win_start[ids][phase[ids] == _WINDOW]
        oldest = live_starts.min() if live_starts.size else k
        for kk in [kk for kk in records if kk < oldest]:
            del records[kk]

    for e in ids:
        if results[e] is None:
            results[e] = NoCrossingBeforeEscape(f"no section crossing before t={t_escape}")
    return results


def _steps_done(k):
    return k >= 1


def _g(box: IArray, i: int, c: float, sign: int) -> IArray:
    g = box[:, i] - c
    return g if sign > 0 else -g


def _image_from_window(system, section, records, k0, k1, e, delta, c1, Dn_last, row_last, refine: int = 2):
    i = section.coord_index
    c = float(section.value)
    free = list(section.free)
    d = system.dimension
    window = []
    for kk in range(k0, k1 + 1):
        rec = records[kk]
        row = int(np.nonzero(rec.ids == e)[0][0])
        window.append((rec, row))
    E = window[0][0].data.over[window[0][1]]
    for rec, row in window[1:]:
        E = E.hull(rec.data.over[row])

    # time inside the window where the centre trajectory meets the section
    kk, s = _centre_crossing(window, i, c)
    rec, row = window[kk]
    data = rec.data.take(np.array([row]))
    phi, J = data.eval_at(s, c1=False)
    phi, J = phi[0], J[0]
    S = data.start
    C, r0, B, r = S.C[0], S.r0[0], S.B[0], S.r[0]
    JC = imatmul(J, C)
    JB = imatmul(J, B)
    ui = phi[i] + imatmul(JC[i : i + 1], r0)[0] + imatmul(JB[i : i + 1], r)[0]
    ta = IArray(rec.data.t) + s

    affine, img, tau, trans = _project(system, section, E, phi, JC, JB, r0, r, ui, ta, delta)
    for _ in range(refine):
        # the connecting pieces only live between t_a and the return times
        t_lo = min(float(tau.lo), float(ta.lo))
        t_hi = max(float(tau.hi), float(ta.hi))
        En = _window_hull(window, t_lo, t_hi)
        if En is None:
            break
        En, empty = En.intersect(E)
        if np.any(empty):
            break
        E = En
        try:
            a2, i2, t2, tr2 = _project(system, section, E, phi, JC, JB, r0, r, ui, ta, delta)
        except TransversalityFailure:
            break
        img, _ = img.intersect(i2)
        tau, _ = tau.intersect(t2)
        affine, trans = a2, tr2

    emb_box = IArray(np.full(d, c), np.full(d, c))
    for a, j in enumerate(free):
        emb_box.lo[j] = img.lo[a]
        emb_box.hi[j] = img.hi[a]
    if not section.satisfied(emb_box[None, :])[0]:
        raise SectionConstraintViolated(f"image {Box.from_iarray(img)} leaves the section's half-space")
    deriv = None
    if c1:
        deriv = _derivative(system, section, window, tau, emb_box, delta, Dn_last, row_last)
    return PoincareImage(
        Box.from_iarray(img),
        Interval(float(tau.lo), float(tau.hi)),
        Interval(float(trans.lo), float(trans.hi)),
        affine,
        deriv,
    )


def _project(system, section, E, phi, JC, JB, r0, r, ui, ta, delta):
    """Affine section image, box hull, return time and crossing speed, with
    the field ratios taken over ``E``."""
    i = section.coord_index
    c = float(section.value)
    free = list(section.free)
    d = system.dimension
    F = system.field_iarray(E[None, :])[0]
    if delta:
        F = F.inflate(delta)
    Fi = F[i]
    trans = Fi * section.crossing_sign
    if not trans.lo > 0:
        raise TransversalityFailure("crossing-coordinate velocity may vanish on the crossing window")
    R = IArray(F.lo[free], F.hi[free]) / Fi  # (k,)
    # L = e_free - R e_i  (k x d interval matrix)
    k = len(free)
    L_lo = np.zeros((k, d))
    L_hi = np.zeros((k, d))
    for a, j in enumerate(free):
        L_lo[a, j] = L_hi[a, j] = 1.0
    L = IArray(L_lo, L_hi)
    L.lo[:, i] = -R.hi
    L.hi[:, i] = -R.lo
    center = imatmul(L, phi) + R * c
    affine = AffineImage(center, [(imatmul(L, JC), r0), (imatmul(L, JB), r)])
    tau = ta - (ui - c) / Fi
    return affine, affine.hull(), tau, trans


def _window_hull(window, t_lo, t_hi):
    """Hull of the set over ``[t_lo, t_hi]`` from the window's Taylor data."""
    out = None
    for rec, row in window:
        data = rec.data
        lo = max(t_lo - data.t, 0.0)
        hi = min(t_hi - data.t, data.h)
        if lo > hi:
            continue
        lo = max(math.nextafter(lo, -math.inf), 0.0)
        hi = min(math.nextafter(hi, math.inf), data.h)
        one = data.take(np.array([row]))
        phi, J = one.eval_at(IArray(np.array([lo]), np.array([hi])), c1=False)
        S = one.start
        X = phi[0] + imatmul(imatmul(J[0], S.C[0]), S.r0[0]) + imatmul(imatmul(J[0], S.B[0]), S.r[0])
        out = X if out is None else out.hull(X)
    return out


def _centre_crossing(window, i, c):
    """(window index, s) where the centre polynomial crosses the section (non-rigorous choice)."""
    for idx, (rec, row) in enumerate(window):
        coefs = [cc.mid()[row, i] for cc in rec.data.cx]
        h = rec.data.h

        def g(s):
            acc = 0.0
            for a in reversed(coefs):
                acc = acc * s + a
            return acc - c

        g0, g1 = g(0.0), g(h)
        if (g0 <= 0) != (g1 <= 0):
            lo, hi = 0.0, h
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if (g(mid) <= 0) == (g0 <= 0):
                    lo = mid
                else:
                    hi = mid
            return idx, lo
    return 0, 0.0


def _derivative(system, section, window, tau, emb_box, delta, Dn_last, row_last):
    """Enclosure of DP (free coords -> free coords) over the source set."""
    i = section.coord_index
    free = list(section.free)
    Dphi = None
    for rec, row in window:
        data = rec.data
        t0 = data.t
        lo = max(float(tau.lo) - t0, 0.0)
        hi = min(float(tau.hi) - t0, data.h)
        if lo > hi:
            continue
        lo = max(math.nextafter(lo, -math.inf), 0.0)
        hi = min(math.nextafter(hi, math.inf), data.h)
        one = data.take(np.array([row]))
        _, J = one.eval_at(IArray(np.array([lo]), np.array([hi])), c1=True)
        Dk = imatmul(J[0], rec.D[row])
        Dphi = Dk if Dphi is None else Dphi.hull(Dk)
    if Dphi is None:
        raise TransversalityFailure("return-time bracket outside the crossing window")
    Dcols = IArray(Dphi.lo[:, free], Dphi.hi[:, free])  # d x k
    fP = system.field_iarray(emb_box[None, :])[0]
    if delta:
        fP = fP.inflate(delta)
    row_i = Dcols[i]  # k
    rows = []
    for j in free:
        corr = (fP[j] / fP[i]) * row_i
        rows.append(Dcols[j] - corr)
    return IArray(np.stack([r.lo for r in rows]), np.stack([r.hi for r in rows]))


# ---------------------------------------------------------------------------
# single-box API


def section_set(section: Section, centers: IArray, gens: np.ndarray, r0: IArray) -> LohnerSet:
    """Lohner sets ``embed(center + gens r0)`` for a batch of section pieces.

    ``centers`` is ``(n, k)`` (interval), ``gens`` ``(n, k, m)``, ``r0`` ``(n, m)``.
    """
    n, k = centers.shape
    d = section.dim
    free = list(section.free)
    lo = np.full((n, d), float(section.value))
    hi = lo.copy()
    lo[:, free] = centers.lo
    hi[:, free] = centers.hi
    C = np.zeros((n, d, gens.shape[-1]))
    C[:, free, :] = gens
    return LohnerSet.from_affine(IArray(lo, hi), C, r0)


def poincare_map(
    system,
    section: Section,
    p,
    cfg: IntegratorConfig | None = None,
    t_escape: float = 20.0,
    delta: float = 0.0,
    c1: bool = False,
    record: bool = True,
) -> PoincareImage:
    """Rigorous Poincaré image of the section box ``p`` (free coordinates)."""
    cfg = cfg or IntegratorConfig()
    P = IArray.coerce(Box(p))
    k = section.dim - 1
    if P.shape != (k,):
        raise ValueError(f"section box must have {k} components")
    amb = IArray(np.full(section.dim, float(section.value)))
    amb.lo[list(section.free)] = P.lo
    amb.hi[list(section.free)] = P.hi
    if not section.satisfied(amb[None, :])[0]:
        raise SectionConstraintViolated(f"start box {Box(p)} violates the section constraints")
    mid = P.mid()
    gens = np.diag(np.maximum(P.rad(), 0.0))[None]
    r0 = IArray(-np.ones((1, k)), np.ones((1, k)))
    centers = IArray(mid[None, :])
    # rad() bounds the half width from above, so mid + diag(rad)[-1,1] covers P
    S = section_set(section, centers, gens, r0)
    res = poincare_batch(system, section, S, cfg, t_escape, delta, c1, record)[0]
    if isinstance(res, Exception):
        raise res
    return res


def return_time_hull(images) -> Interval:
    images = list(images)
    if not images:
        raise EmptyInput("return_time_hull needs at least one image")
    out = images[0].return_time
    for im in images[1:]:
        out = out.hull(im.return_time)
    return out


# ---------------------------------------------------------------------------
# non-rigorous float simulation (explorer, witnesses, oracles)


def _hermite(x0, x1, f0, f1, h, theta):
    t = theta[:, None]
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    return h00 * x0 + h10 * h * f0 + h01 * x1 + h11 * h * f1


def float_returns(system, section: Section, X0, n_returns: int = 1, t0: float = 0.0, h: float = 0.005,
                  t_max: float = 40.0, perturbation=None, record: bool = False):
    """Non-rigorous section returns of many trajectories at once (fixed-step RK4).

    ``X0`` is ``(n, d)``.  ``perturbation(t)`` returns a ``(d,)`` vector added
    to the field.  Returns ``(times, points)`` of shape ``(n, n_returns)`` and
    ``(n, n_returns, d)``; rows that do not return in time get NaN.  With
    ``record`` the dense trajectory ``(ts, xs)`` of the grid is returned too.
    """
    X = np.array(X0, dtype=float, copy=True)
    if X.ndim == 1:
        X = X[None, :]
    n, d = X.shape
    i = section.coord_index
    c = float(section.value)
    sgn = section.crossing_sign

    def F(t, U):
        v = system.field_float(U)
        if perturbation is not None:
            v = v + np.asarray(perturbation(t), dtype=float)
        return v

    times = np.full((n, n_returns), np.nan)
    pts = np.full((n, n_returns, d), np.nan)
    count = np.zeros(n, dtype=int)
    t = t0
    f0 = F(t, X)
    rec_t, rec_x = ([t], [X.copy()]) if record else (None, None)
    steps = int(math.ceil(t_max / h))
    for _ in range(steps):
        k1 = f0
        k2 = F(t + h / 2, X + h / 2 * k1)
        k3 = F(t + h / 2, X + h / 2 * k2)
        k4 = F(t + h, X + h * k3)
        Xn = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        f1 = F(t + h, Xn)
        g0 = (X[:, i] - c) * sgn
        g1 = (Xn[:, i] - c) * sgn
        hit = (g0 < 0) & (g1 >= 0) & (count < n_returns)
        if hit.any():
            rows = np.nonzero(hit)[0]
            lo = np.zeros(rows.size)
            hi = np.ones(rows.size)
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                gm = (_hermite(X[rows], Xn[rows], f0[rows], f1[rows], h, mid)[:, i] - c) * sgn
                neg = gm < 0
                lo = np.where(neg, mid, lo)
                hi = np.where(neg, hi, mid)
            P = _hermite(X[rows], Xn[rows], f0[rows], f1[rows], h, hi)
            P[:, i] = c
            okc = section.satisfied(IArray(P))
            for r, row in enumerate(rows):
                if okc[r]:
                    times[row, count[row]] = t + hi[r] * h
                    pts[row, count[row]] = P[r]
                    count[row] += 1
        X, f0 = Xn, f1
        t = t + h
        if record:
            rec_t.append(t)
            rec_x.append(X.copy())
        if np.all(count >= n_returns):
            break
    if record:
        return times, pts, (np.array(rec_t), np.stack(rec_x, axis=1))
    return times, pts
