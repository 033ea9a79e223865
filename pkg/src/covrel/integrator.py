"""Rigorous flow enclosures: Picard a-priori bounds, interval Taylor steps
and Lohner-style propagation of the enclosed set.

The set carried between steps is the doubleton

    u = xbar + C r0 + B r

with ``xbar`` a float centre, ``C`` and ``B`` float matrices and ``r0``,
``r`` interval vectors.  ``r0`` never changes (it is the initial
parametrisation); ``B`` is re-orthogonalised every step (``method="lohner"``)
or kept as the identity (``method="direct"``, the plain mean-value form).
All routines are batched over a leading axis of independent sets.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np

from .interval import (
    Box,
    IArray,
    Interval,
    add_ru,
    div_ru,
    exp_upper,
    imatmul,
    mul_ru,
    pmatmul,
    point_inverse_enclosure,
    sum_ru,
    stack,
)
from .taylor import horner, taylor_series, variational_series

__all__ = [
    "IntegratorConfig",
    "FlowEnclosure",
    "LohnerSet",
    "StepTooLarge",
    "WidthBlowup",
    "MaxStepsExceeded",
    "a_priori_enclosure",
    "step",
    "flow",
]


class IntegrationError(RuntimeError):
    pass


class StepTooLarge(IntegrationError):
    pass


class WidthBlowup(IntegrationError):
    pass


class MaxStepsExceeded(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    order: int = 12
    h_min: float = 1e-6
    h_max: float = 0.1
    tol: float = 1e-13
    max_steps: int = 20000
    width_ceiling: float = 1.0
    method: str = "lohner"

    def __post_init__(self):
        if self.order < 2:
            raise ValueError("Taylor order must be at least 2")
        if not (0 < self.h_min <= self.h_max):
            raise ValueError("need 0 < h_min <= h_max")
        if self.method not in ("lohner", "direct"):
            raise ValueError("method must be 'lohner' or 'direct'")


@dataclass
class FlowEnclosure:
    at_time: Box
    over_interval: Box
    steps_taken: int
    time: Interval


# ---------------------------------------------------------------------------
# doubleton sets


@dataclass
class LohnerSet:
    xbar: np.ndarray  # (n, d)
    C: np.ndarray  # (n, d, m)
    r0: IArray  # (n, m)
    B: np.ndarray  # (n, d, d)
    r: IArray  # (n, d)

    @classmethod
    def from_boxes(cls, X: IArray) -> "LohnerSet":
        n, d = X.shape
        xbar = X.mid()
        eye = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        return cls(xbar, np.zeros((n, d, 1)), IArray.zeros((n, 1)), eye, X - xbar)

    @classmethod
    def from_affine(cls, center: IArray, C: np.ndarray, r0: IArray) -> "LohnerSet":
        """``center + C r0`` with an interval centre (its width goes into ``r``)."""
        n, d = center.shape
        xbar = center.mid()
        eye = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        return cls(xbar, np.asarray(C, float), r0, eye, center - xbar)

    @property
    def n(self):
        return self.xbar.shape[0]

    def hull(self) -> IArray:
        return pmatmul(self.C, self.r0) + pmatmul(self.B, self.r) + self.xbar

    def take(self, idx) -> "LohnerSet":
        return LohnerSet(self.xbar[idx], self.C[idx], self.r0[idx], self.B[idx], self.r[idx])


@dataclass
class StepData:
    """Everything needed to re-evaluate the set inside a step."""

    t: float
    h: float
    cx: list  # Taylor coefficients at xbar, orders 0..p
    rem: IArray  # coefficient p+1 on the a-priori box
    V: list  # Jacobian-of-Taylor-map coefficients on the set hull, orders 0..p
    E: IArray  # a-priori (over-interval) box
    over: IArray  # tightened over-interval box
    pert: np.ndarray | None  # per-component perturbation bound for the step
    start: LohnerSet
    V_rem: IArray | None = None  # C1 remainder V[p+1](E, I) @ W

    def take(self, idx) -> "StepData":
        return StepData(
            self.t,
            self.h,
            [c[idx] for c in self.cx],
            self.rem[idx],
            [v[idx] for v in self.V],
            self.E[idx],
            self.over[idx],
            None if self.pert is None else self.pert[idx],
            self.start.take(idx),
            None if self.V_rem is None else self.V_rem[idx],
        )

    def eval_at(self, s, c1: bool = True):
        """Affine pieces ``(phi, J)`` with ``u(t+s) in phi + J (C r0 + B r)``.

        ``s`` is a float or an ``IArray`` (per element, shape ``(n,)``) inside
        ``[0, h]``.
        """
        if isinstance(s, IArray):
            sv = s[:, None]
            sm = s[:, None, None]
        else:
            sv = sm = s
        phi = horner(self.cx, sv)
        p1 = len(self.cx)
        spow = _pow_interval(s, p1)
        if isinstance(s, IArray):
            spow = spow[:, None]
        phi = phi + self.rem * spow
        if self.pert is not None:
            phi = phi.inflate(self.pert)
        J = horner(self.V, sm)
        if c1 and self.V_rem is not None:
            sp = _pow_interval(s, p1)
            if isinstance(s, IArray):
                sp = sp[:, None, None]
            J = J + self.V_rem * sp
        return phi, J


def _pow_interval(s, k):
    if isinstance(s, IArray):
        lo = np.maximum(s.lo, 0.0) ** k
        hi = s.hi**k
        return IArray(np.nextafter(lo, -np.inf).clip(min=0), np.nextafter(np.nextafter(hi, np.inf), np.inf))
    v = float(s) ** k
    return IArray(max(0.0, math.nextafter(v, -math.inf)), math.nextafter(math.nextafter(v, math.inf), math.inf))


# ---------------------------------------------------------------------------
# single-step pieces


def _time_box(h: float) -> IArray:
    return IArray(0.0, h)


def _apriori_batch(system, X: IArray, h: float, delta: float = 0.0, iters: int = 12):
    """Picard enclosures for a batch; returns (E, ok_mask)."""
    H = _time_box(h)
    F = system.field_iarray(X)
    if delta:
        F = F.inflate(delta)
    Y = X + H * F
    w = np.maximum(Y.width(), 1e-14 + 1e-12 * np.abs(Y.mid()))
    E = Y.inflate(0.1 * w + 1e-15)
    ok = np.zeros(X.shape[0], dtype=bool)
    for _ in range(iters):
        F = system.field_iarray(E)
        if delta:
            F = F.inflate(delta)
        Y = X + H * F
        inside = np.all((E.lo <= Y.lo) & (Y.hi <= E.hi), axis=-1)
        ok |= inside
        if ok.all():
            break
        # grow only the failing elements
        grow = ~ok
        w = np.maximum(Y.width(), 1e-14)
        newE = E.hull(Y).inflate(0.2 * w)
        E = IArray(np.where(grow[:, None], newE.lo, E.lo), np.where(grow[:, None], newE.hi, E.hi))
    # Y is a valid (tighter) enclosure wherever E was verified
    F = system.field_iarray(E)
    if delta:
        F = F.inflate(delta)
    Y = X + H * F
    final_ok = ok & np.all((E.lo <= Y.lo) & (Y.hi <= E.hi), axis=-1)
    return Y, final_ok


def a_priori_enclosure(system, B, h: float) -> Box:
    """Box ``E`` with ``B + [0,h] f(E) subset E``: solutions from ``B`` stay in ``E`` on ``[0,h]``."""
    if not h > 0:
        raise ValueError("step must be positive")
    X = IArray.coerce(B)[None, :]
    E, ok = _apriori_batch(system, X, h)
    if not ok[0]:
        raise StepTooLarge(f"Picard iteration did not contract for h={h}")
    return Box.from_iarray(E[0])


def _lognorm_rows(J: IArray) -> np.ndarray:
    """Per-element upper bound of the logarithmic infinity-norm."""
    mag = J.mag()
    d = mag.shape[-1]
    idx = np.arange(d)
    terms = mag.copy()
    terms[..., idx, idx] = J.hi[..., idx, idx]
    acc = terms[..., 0]
    for j in range(1, d):
        acc = add_ru(acc, terms[..., j])
    return acc.max(axis=-1)


def perturbation_growth(l: np.ndarray, delta: float, h: float) -> np.ndarray:
    """Upper bound of ``delta (e^{l h} - 1) / l`` (``delta h`` at ``l = 0``)."""
    out = np.empty_like(l, dtype=float)
    for i, li in enumerate(np.asarray(l, float).ravel()):
        out.flat[i] = deviation_upper(li, delta, h)
    return out


def deviation_upper(L: float, delta: float, t: float) -> float:
    """Rigorous upper bound for ``delta (e^{L t} - 1) / L``."""
    if delta == 0.0 or t == 0.0:
        return 0.0
    if L == 0.0:
        return float(mul_ru(np.float64(delta), np.float64(t)))
    if L > 0:
        Lt = float(mul_ru(np.float64(L), np.float64(t)))
        num = add_ru(np.float64(exp_upper(Lt)), -1.0)
        # divide by a lower bound of L; L is exact here so plain division rounded up
        q = div_ru(num, np.float64(L))
        # (e^x - 1)/x <= e^x keeps tiny L (e.g. a rounded-up zero) harmless
        alt = mul_ru(mul_ru(np.float64(delta), np.float64(t)), np.float64(exp_upper(Lt)))
        return float(min(mul_ru(q, np.float64(delta)), alt))
    # L < 0: (1 - e^{Lt}) / |L| <= t, use the tighter form when it is safe
    from .interval import exp_lower

    Lt_lo = -float(mul_ru(np.float64(-L), np.float64(t)))
    num = add_ru(1.0, -np.float64(exp_lower(Lt_lo)))
    q = div_ru(num, np.float64(-L))
    return float(min(mul_ru(q, np.float64(delta)), mul_ru(np.float64(delta), np.float64(t))))


# ---------------------------------------------------------------------------
# the Lohner step


class _Stepper:
    def __init__(self, system, cfg: IntegratorConfig, delta: float = 0.0, c1: bool = False):
        self.system = system
        self.cfg = cfg
        self.delta = float(delta)
        self.c1 = c1
        self.d = system.dimension

    def propose_h(self, S: LohnerSet, h_cap: float):
        cfg = self.cfg
        p = cfg.order
        cx = taylor_series(self.system, IArray(S.xbar), p)
        top = np.maximum(cx.x[p].mag().max(axis=-1), cx.x[p - 1].mag().max(axis=-1) ** (p / (p - 1)))
        top = np.maximum(top, 1e-300)
        h = float(np.min(0.9 * (cfg.tol / top) ** (1.0 / p)))
        h = min(max(h, cfg.h_min), cfg.h_max, h_cap)
        return cx, h

    def step(self, S: LohnerSet, h_cap: float = math.inf, t: float = 0.0, s_eval=None):
        """Advance every set in ``S`` by one common step.  Returns ``(S_new, data)``.

        Steps are multiples of 2**-40 (so elapsed times add up exactly) unless
        capped by ``h_cap``; ``s_eval`` overrides the time at which the new set
        is evaluated (an interval when the exact remaining time is not a float).
        """
        cfg = self.cfg
        p = cfg.order
        n, d = S.n, self.d
        X = S.hull()
        cx, h = self.propose_h(S, h_cap)
        if h < h_cap:
            h = math.ldexp(math.floor(math.ldexp(h, 40)), -40) or h
        while True:
            E, ok = _apriori_batch(self.system, X, h, self.delta)
            if ok.all():
                break
            h = math.ldexp(math.floor(math.ldexp(h * 0.5, 40)), -40) or h * 0.5
            if h < cfg.h_min:
                err = StepTooLarge(f"a-priori enclosure failed down to h={h:.3g}")
                err.failed = ~ok
                raise err
        ser = taylor_series(self.system, stack([X, E]).reshape(2 * n, d), p + 1, jacobian=True)
        rem = ser.x[p + 1][n:]
        jac_X = [None if j is None else j[:n] for j in ser.jac[:p]]
        V = variational_series(jac_X, p)
        # tightened over-interval box from the Taylor polynomial on [0, h]
        Hb = _time_box(h)
        over = horner([c[:n] for c in ser.x[: p + 1]], Hb) + rem * _pow_interval(IArray(0.0, h), p + 1)
        if self.delta:
            over = over.inflate(self.delta * h)
        over, empty = over.intersect(E)
        over = IArray(np.where(empty, E.lo, over.lo), np.where(empty, E.hi, over.hi))

        pert = None
        if self.delta:
            JE = self.system.jacobian_iarray(E)
            l = _lognorm_rows(JE)
            pert = perturbation_growth(l, self.delta, h)[:, None] * np.ones(d)

        V_rem = None
        if self.c1:
            jac_E = [None if j is None else j[n:] for j in ser.jac[: p + 1]]
            VE = variational_series(jac_E, p + 1)
            W = _variational_apriori(self.system, E, h)
            V_rem = imatmul(VE[p + 1], W)

        data = StepData(t, h, cx.x, rem, V, E, over, pert, S, V_rem)
        phi, J = data.eval_at(h if s_eval is None else s_eval, c1=False)
        return self._advance(S, phi, J), data

    def _advance(self, S: LohnerSet, phi: IArray, J: IArray) -> LohnerSet:
        xbar = phi.mid()
        z = phi - xbar
        JC = imatmul(J, S.C)
        Cn = JC.mid()
        dC = JC - Cn
        JB = imatmul(J, S.B)
        rest = imatmul(dC, S.r0) + z
        if self.cfg.method == "direct":
            r = imatmul(JB, S.r) + rest
            Bn = S.B
        else:
            A = JB.mid()
            # order columns by their contribution so the dominant one leads the QR
            rw = S.r.width()
            rw = rw + 1e-3 * rw.max(axis=-1, keepdims=True) + 1e-300
            weight = np.linalg.norm(A, axis=-2) * rw
            order = np.argsort(-weight, axis=-1)
            Ap = np.take_along_axis(A, order[:, None, :], axis=-1)
            Q, R = np.linalg.qr(Ap)
            sgn = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
            sgn[sgn == 0] = 1.0
            Q = Q * sgn[:, None, :]
            Qi = point_inverse_enclosure(Q)
            r = imatmul(imatmul(Qi, JB), S.r) + imatmul(Qi, rest)
            Bn = Q
        return LohnerSet(xbar, Cn, S.r0, Bn, r)


def _variational_apriori(system, E: IArray, h: float, iters: int = 3) -> IArray:
    """Enclosure ``W`` of ``V(t)``, ``t in [0,h]``, for ``V' = Df(u) V``, ``V(0)=I``, ``u in E``.

    Starts from the Gronwall bound ``|V(t)| <= exp(h |Df(E)|)`` and tightens by
    Picard iterates, each of which is itself an enclosure.
    """
    n, d = E.shape
    JE = system.jacobian_iarray(E)
    K = float(np.max(sum_ru(JE.mag(), axis=-1)))
    b = exp_upper(mul_ru(h, K))
    H = _time_box(h)
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    I = IArray(eye.copy(), eye.copy())
    W = IArray(np.full((n, d, d), -b), np.full((n, d, d), b))
    for _ in range(iters):
        Y = I + H * imatmul(JE, W)
        W, empty = W.intersect(Y)
        if empty.any():
            raise StepTooLarge("variational a-priori enclosure is empty")
    return W


# ---------------------------------------------------------------------------
# public single-set API


def step(system, B, cfg: IntegratorConfig):
    """One verified step from box ``B``: ``(box at h, box over [0,h], h)``."""
    S = LohnerSet.from_boxes(IArray.coerce(B)[None, :])
    stepper = _Stepper(system, cfg)
    Sn, data = stepper.step(S)
    at = Sn.hull()[0]
    if np.max(at.width()) > cfg.width_ceiling:
        raise WidthBlowup(f"enclosure width {np.max(at.width()):.3g} exceeds ceiling")
    return Box.from_iarray(at), Box.from_iarray(data.over[0]), data.h


def integrate_sets(system, S: LohnerSet, T: float, cfg: IntegratorConfig, delta: float = 0.0):
    """Advance a batch of sets to time ``T``; returns ``(S_T, over_hull, steps)``."""
    if not T > 0:
        raise ValueError("T must be positive")
    stepper = _Stepper(system, cfg, delta)
    t = 0.0
    over = None
    steps = 0
    T_exact = Fraction(T)
    while t < T:
        if steps >= cfg.max_steps:
            raise MaxStepsExceeded(f"{steps} steps reached before T={T}")
        remaining = T_exact - Fraction(t)
        cap = float(remaining)
        s_eval = None
        if Fraction(cap) != remaining:
            cap = math.nextafter(cap, math.inf) if Fraction(cap) < remaining else cap
            s_eval = IArray(math.nextafter(cap, -math.inf), cap)
        S, data = stepper.step(S, h_cap=cap, t=t, s_eval=None)
        steps += 1
        over = data.over if over is None else over.hull(data.over)
        h = data.h
        if h >= cap:
            if s_eval is not None:
                phi, J = data.eval_at(s_eval, c1=False)
                S = stepper._advance(data.start, phi, J)
            t = T
        else:
            t = t + h
        width = np.max(S.hull().width())
        if width > cfg.width_ceiling:
            raise WidthBlowup(f"enclosure width {width:.3g} exceeds ceiling at t={t:.4g}")
    return S, over, steps


def flow(system, B, T: float, cfg: IntegratorConfig | None = None, delta: float = 0.0) -> FlowEnclosure:
    """Enclosure of the flow from box ``B`` at time ``T`` and over ``[0, T]``."""
    cfg = cfg or IntegratorConfig()
    X = IArray.coerce(B)[None, :]
    S, over, steps = integrate_sets(system, LohnerSet.from_boxes(X), T, cfg, delta)
    return FlowEnclosure(
        Box.from_iarray(S.hull()[0]),
        Box.from_iarray(over[0].hull(X[0])),
        steps,
        Interval.point(T),
    )
