"""How large a perturbation the covering relations survive.

Two routes give a certified ``delta``:

* analytical: a Gronwall bound on the distance between perturbed and
  unperturbed solutions over a global enclosure ``Z`` of the connecting
  trajectories, compared with the chart margins;
* computational: re-run the covering checks with the differential inclusion
  ``x' in f(x) + [-delta, delta]^3`` and bisect on ``delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .integrator import FlowEnclosure, IntegratorConfig, deviation_upper, flow
from .interval import (
    Box,
    IArray,
    add_rd,
    add_ru,
    div_rd,
    div_ru,
    exp_upper,
    mul_rd,
    mul_ru,
)
from .system import lognorm_bound

__all__ = [
    "RobustnessReport",
    "MissingEnclosureData",
    "ZeroMargin",
    "NeverVerified",
    "global_enclosure",
    "deviation_bound",
    "delta_from_slack",
    "analytical_delta",
    "inclusion_flow",
    "bisect_delta",
    "computational_delta_search",
]


class MissingEnclosureData(ValueError):
    pass


class ZeroMargin(ValueError):
    pass


class NeverVerified(RuntimeError):
    pass


@dataclass
class RobustnessReport:
    mode: str
    delta_certified: float
    per_relation: list = field(default_factory=list)
    global_enclosure: Box | None = None
    t_max: float = math.nan
    L: float = math.nan
    trace: list = field(default_factory=list)  # (delta, passed) in evaluation order


def global_enclosure(certs) -> Box:
    """Hull of the stored trajectory enclosures of all certificates."""
    Z = None
    for c in certs:
        enc = getattr(c, "enclosure", None)
        if enc is None:
            raise MissingEnclosureData(f"relation {c.source}->{c.target} has no trajectory enclosure")
        E = IArray.coerce(enc)
        Z = E if Z is None else Z.hull(E)
    if Z is None:
        raise MissingEnclosureData("no certificates given")
    return Box.from_iarray(Z)


def deviation_bound(L: float, delta: float, t: float) -> float:
    """Upper bound of ``delta (e^{L t} - 1) / L`` (``delta t`` when ``L = 0``)."""
    if t < 0 or delta < 0:
        raise ValueError("deviation_bound needs t >= 0 and delta >= 0")
    return deviation_upper(float(L), float(delta), float(t))


def delta_from_slack(slack: float, L: float, t: float) -> float:
    """Largest ``delta`` (rounded down) with ``deviation_bound(L, delta, t) <= slack``.

    For ``L <= 0`` the bound ``delta t`` is used, which is valid for any
    non-positive ``L``.
    """
    if slack <= 0:
        return 0.0
    if L <= 0:
        return float(div_rd(np.float64(slack), np.float64(t)))
    Lt = float(mul_ru(np.float64(L), np.float64(t)))
    eLt = np.float64(exp_upper(Lt))
    den = add_ru(eLt, -1.0)
    d = float(div_rd(mul_rd(np.float64(slack), np.float64(L)), den))
    # (e^{Lt} - 1) / L <= t e^{Lt}; far better when L t is tiny
    alt = float(div_rd(np.float64(slack), mul_ru(np.float64(t), eLt)))
    return max(d, alt)


def _min_margin(c) -> float:
    return min(c.margin_left, c.margin_right, c.margin_stable)


def analytical_delta(certs, Z, t_max: float, chart_scales, transversality, system=None, L=None, speed=None) -> RobustnessReport:
    """Certified ``delta`` from margins, a log-norm bound and return times.

    ``chart_scales[k]`` bounds the operator norm of the target chart of
    ``certs[k]`` and ``transversality[k]`` is an interval of crossing speeds.
    With ``system`` given, ``L`` and the field speed are bounded over ``Z``
    grown by the largest slack (a perturbed orbit never leaves that box), and
    the crossing amplification accounts for the perturbation itself.
    Explicit ``L`` / ``speed`` use the plain closed form.
    """
    certs = list(certs)
    margins = [_min_margin(c) for c in certs]
    for c, m in zip(certs, margins):
        if not m > 0:
            raise ZeroMargin(f"relation {c.source}->{c.target} has margin {m}")
    slacks = [float(div_rd(np.float64(m), np.float64(s))) for m, s in zip(margins, chart_scales)]
    grow = max(slacks)
    Zi = IArray.coerce(Z)
    t_eff = float(t_max)
    if system is not None:
        Zg = Zi.inflate(grow)
        if L is None:
            L = lognorm_bound(system.jacobian_iarray(Zg[None, :])[0])
        if speed is None:
            speed = float(np.max(system.field_iarray(Zg[None, :])[0].mag()))
            speed = float(add_ru(np.float64(speed), np.float64(grow)))
            extra = grow
        else:
            extra = 0.0
    else:
        if L is None or speed is None:
            raise ValueError("give a system or both L and speed")
        extra = 0.0
    per = []
    best = math.inf
    for c, m, sl, s, tr in zip(certs, margins, slacks, chart_scales, transversality):
        tlo = float(add_rd(np.float64(tr.lo), -np.float64(extra)))
        if not tlo > 0:
            raise ZeroMargin(f"relation {c.source}->{c.target}: transversality lost")
        C = float(add_ru(1.0, div_ru(np.float64(speed), np.float64(tlo))))
        amb = float(div_rd(np.float64(sl), np.float64(C)))
        # the perturbed orbit may need a little longer to reach the section
        t_rel = t_eff if not extra else float(add_ru(np.float64(t_eff), div_ru(np.float64(sl), np.float64(tlo))))
        d = delta_from_slack(amb, float(L), t_rel)
        per.append({"relation": f"{c.source}->{c.target}", "margin": m, "chart_norm": s, "C": C, "slack": amb, "t": t_rel, "delta": d,
                    "deviation": deviation_bound(float(L), d, t_rel)})
        best = min(best, d)
    return RobustnessReport("analytical", best, per, Box.from_iarray(Zi), float(t_max), float(L))


def inclusion_flow(system, B, delta: float, T: float, cfg=None) -> FlowEnclosure:
    """Enclosure of every solution of ``x' in f(x) + [-delta, delta]^d`` from ``B``."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    return flow(system, B, T, cfg or IntegratorConfig(), delta)


def bisect_delta(verifier, bracket=(0.0, 0.05), iters: int = 12):
    """Largest passing ``delta`` found by bisection; ``(delta, trace)``.

    The lower end must pass (else ``NeverVerified``); the upper end is tried
    next and returned directly when it passes.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 <= lo <= hi:
        raise ValueError("bracket must satisfy 0 <= lo <= hi")
    trace = []
    ok = bool(verifier(lo))
    trace.append((lo, ok))
    if not ok:
        raise NeverVerified(f"relations do not verify even at delta={lo}")
    if hi > lo:
        ok = bool(verifier(hi))
        trace.append((hi, ok))
        if ok:
            return hi, trace
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        ok = bool(verifier(mid))
        trace.append((mid, ok))
        if ok:
            lo = mid
        else:
            hi = mid
    return lo, trace


def computational_delta_search(system, section, hsets, relations, cfg=None, bracket=(0.0, 0.05), iters: int = 12,
                               subdivision=None, threads: int = 1, verifier=None, progress=None) -> RobustnessReport:
    """Bisection on ``delta`` with covering checks run on the inclusion.

    ``verifier(delta) -> bool`` replaces the covering check when given.
    """
    from .covering import verify_relations

    last = {}

    def check(delta):
        if verifier is not None:
            return verifier(delta)
        certs = verify_relations(system, section, hsets, relations, cfg, subdivision, delta, threads)
        ok = all(c.verified for c in certs)
        if progress:
            progress(delta, ok)
        if ok:
            last[delta] = certs
        return ok

    d, trace = bisect_delta(check, bracket, iters)
    per = []
    Z = None
    if d in last:
        certs = last[d]
        per = [{"relation": f"{c.source}->{c.target}", "margins": c.margins} for c in certs]
        try:
            Z = global_enclosure(certs)
        except MissingEnclosureData:
            Z = None
    return RobustnessReport("computational", d, per, Z, math.nan, math.nan, trace)
