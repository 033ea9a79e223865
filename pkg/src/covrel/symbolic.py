"""Symbolic dynamics on top of verified covering relations.

Transition matrices, admissible and periodic words, entropy, Krawczyk
certification of periodic points of the Poincaré map, and (non-rigorous)
witness trajectories that follow a prescribed itinerary under a small
time-dependent perturbation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .interval import Box, IArray, imatmul

__all__ = [
    "Word",
    "NotAdmissible",
    "ZeroMatrix",
    "NewtonInconclusive",
    "ShadowingFailed",
    "graph_to_matrix",
    "is_admissible",
    "count_words",
    "enumerate_words",
    "periodic_words",
    "entropy",
    "AffineSectionMap",
    "PoincareSectionMap",
    "PeriodicOrbitCertificate",
    "certify_periodic_orbit",
    "make_perturbation",
    "WitnessResult",
    "witness_trajectory",
]


class NotAdmissible(ValueError):
    pass


class ZeroMatrix(ValueError):
    pass


class NewtonInconclusive(RuntimeError):
    pass


class ShadowingFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class Word:
    symbols: tuple
    cyclic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))

    def __len__(self):
        return len(self.symbols)

    def canonical(self) -> tuple:
        """Lexicographically least rotation (cyclic words), else the symbols."""
        s = self.symbols
        if not self.cyclic or not s:
            return s
        return min(s[i:] + s[:i] for i in range(len(s)))

    def __eq__(self, other):
        if not isinstance(other, Word):
            return NotImplemented
        return self.cyclic == other.cyclic and self.canonical() == other.canonical()

    def __hash__(self):
        return hash((self.cyclic, self.canonical()))

    def __str__(self):
        return ",".join(str(s) for s in self.symbols)

    @classmethod
    def parse(cls, text: str, cyclic: bool = False) -> "Word":
        parts = [p for p in text.replace(" ", "").split(",") if p]
        return cls(tuple(int(p) for p in parts), cyclic)


def _adj(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("transition matrix must be square")
    if not np.all(np.isfinite(A)) or np.any(A < 0):
        raise ValueError("transition matrix entries must be finite and non-negative")
    return (A > 0).astype(int)


def graph_to_matrix(relations, k: int | None = None, convention: str = "forward") -> np.ndarray:
    """0/1 matrix with ``A[i, j] = 1`` iff ``N_i`` covers ``N_j`` (forward).

    ``convention="paper"`` returns the transpose.
    """
    relations = [(int(a), int(b)) for a, b in relations]
    if k is None:
        k = 1 + max((max(a, b) for a, b in relations), default=-1)
    A = np.zeros((k, k), dtype=int)
    for a, b in relations:
        A[a, b] = 1
    if convention == "paper":
        return A.T.copy()
    if convention != "forward":
        raise ValueError("convention must be 'forward' or 'paper'")
    return A


def _symbols(w):
    if isinstance(w, Word):
        return w.symbols, w.cyclic
    return tuple(int(s) for s in w), False


def is_admissible(w, A, cyclic: bool | None = None) -> bool:
    A = _adj(A)
    s, cyc = _symbols(w)
    if cyclic is not None:
        cyc = cyclic
    k = A.shape[0]
    if any(not 0 <= x < k for x in s):
        return False
    pairs = list(zip(s, s[1:]))
    if cyc and s:
        pairs.append((s[-1], s[0]))
    return all(A[a, b] > 0 for a, b in pairs)


def _ipow(A, n):
    # exact integer powers (python ints, no overflow)
    M = np.array(A, dtype=object)
    R = np.identity(M.shape[0], dtype=int).astype(object)
    while n:
        if n & 1:
            R = R.dot(M)
        M = M.dot(M)
        n >>= 1
    return R


def count_words(n: int, A) -> int:
    """Number of admissible words of length ``n``: the entry sum of ``A^(n-1)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return int(_ipow(_adj(A), n - 1).sum())


def enumerate_words(n: int, A, cyclic: bool = False) -> list:
    """All admissible words of length ``n`` in lexicographic order (brute force)."""
    k = _adj(A).shape[0]
    return [w for w in itertools.product(range(k), repeat=n) if is_admissible(w, A, cyclic)]


def periodic_words(n: int, A) -> list:
    """Cyclically admissible words of length ``n``, one per rotation class.

    Words whose rotations coincide (like ``(1, 1)``) are included once.
    """
    seen = set()
    out = []
    for w in enumerate_words(n, A, cyclic=True):
        c = Word(w, True).canonical()
        if c not in seen:
            seen.add(c)
            out.append(Word(c, True))
    return out


def entropy(A, tol: float = 1e-12, max_iter: int = 100000) -> float:
    """``log`` of the spectral radius of the 0/1 matrix, by power iteration.

    Iterates with ``A + I`` (same Perron vector, radius shifted by one) so
    periodic matrices converge too.
    """
    B = _adj(A).astype(float)
    if not B.any():
        raise ZeroMatrix("entropy of the zero matrix is undefined")
    n = B.shape[0]
    if not _ipow(_adj(A), n).any():
        return -math.inf  # nilpotent: finitely many words
    M = B + np.eye(n)
    v = np.ones(n) / n
    lam = 0.0
    for _ in range(max_iter):
        u = M @ v
        lam_new = u.sum() / v.sum()
        v = u / u.sum()
        if abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    rho = lam - 1.0
    if rho <= 1e-15:
        return -math.inf
    return math.log(rho)


# ---------------------------------------------------------------------------
# section maps used by the certification and witness code


class AffineSectionMap:
    """``x -> A x + b`` on the section; exact enclosures (test stand-in)."""

    def __init__(self, A, b=(0.0, 0.0)):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def point(self, x):
        return self.A @ np.asarray(x, float) + self.b

    def points(self, X):
        return np.asarray(X, float) @ self.A.T + self.b

    def enclose(self, X: IArray):
        return imatmul(IArray(self.A), X) + IArray(self.b), IArray(self.A)


class PoincareSectionMap:
    """The rigorous Poincaré map and a high-accuracy float counterpart."""

    def __init__(self, system, section, cfg=None, t_escape: float = 20.0):
        from .integrator import IntegratorConfig

        self.system = system
        self.section = section
        self.cfg = cfg or IntegratorConfig()
        self.t_escape = t_escape

    def point(self, x, rtol: float = 1e-13):
        from scipy.integrate import solve_ivp

        sec = self.section
        i = sec.coord_index
        u0 = np.full(sec.dim, float(sec.value))
        u0[list(sec.free)] = x

        def ev(t, u):
            return (u[i] - sec.value) * sec.crossing_sign

        ev.direction = 1
        sol = solve_ivp(lambda t, u: self.system.field_float(u), (0.0, self.t_escape), u0, method="DOP853",
                        rtol=rtol, atol=rtol * 1e-3, events=ev)
        for t, u in zip(sol.t_events[0], sol.y_events[0]):
            if t > 1e-6 and sec.satisfied(IArray(u[None, :]))[0]:
                return u[list(sec.free)]
        raise ShadowingFailed("float trajectory did not return to the section")

    def points(self, X):
        """Vectorised float returns (RK4), NaN where no return happens."""
        from .poincare import float_returns

        sec = self.section
        X = np.asarray(X, float)
        U = np.full((len(X), sec.dim), float(sec.value))
        U[:, list(sec.free)] = X
        _, pts = float_returns(self.system, sec, U, 1, h=0.005, t_max=self.t_escape)
        return pts[:, 0][:, list(sec.free)]

    def enclose(self, X: IArray):
        from .poincare import poincare_map

        img = poincare_map(self.system, self.section, Box.from_iarray(X), self.cfg, self.t_escape, c1=True, record=False)
        return IArray.coerce(img.image), img.derivative


# ---------------------------------------------------------------------------
# periodic orbits


@dataclass
class PeriodicOrbitCertificate:
    word: Word
    box: Box  # contains the unique periodic point (Krawczyk image intersected with X)
    search_box: Box  # X
    krawczyk: Box  # K(X), inside int X
    orbit: list  # enclosures of P^j(X), j = 0..n
    radius: float
    contraction: float  # max width ratio |K| / |X|


def _admissible_via(w: Word, relations) -> bool:
    rel = {(int(a), int(b)) for a, b in relations}
    s = w.symbols
    pairs = list(zip(s, s[1:])) + [(s[-1], s[0])]
    return all(p in rel for p in pairs)


def _float_guess(pmap, hsets, w: Word, grid: int = 401):
    """Start point for Newton: scan the unstable coordinate of N_{w0}, q = 0."""
    N0 = hsets[w.symbols[0]]
    p = np.linspace(-0.99, 0.99, grid)
    x = N0.inverse_chart(np.column_stack([p, np.zeros_like(p)]))
    y = x
    ok = np.ones(grid, dtype=bool)
    for j in range(len(w)):
        y = pmap.points(y)
        nxt = hsets[w.symbols[(j + 1) % len(w)]]
        with np.errstate(invalid="ignore"):
            pq = nxt.chart(np.nan_to_num(y, nan=1e300))
            ok &= np.all(np.isfinite(y), axis=1) & np.all(np.abs(pq) < 1, axis=1)
    if not ok.any():
        raise NewtonInconclusive(f"no start point in {N0.name} follows the word {w}")
    r = np.max(np.abs(N0.chart(np.nan_to_num(y)) - N0.chart(x)), axis=1)
    r[~ok] = np.inf
    return x[int(np.argmin(r))]


def _newton(pmap, x, n: int, iters: int = 20, fd: float = 1e-7):
    def F(z):
        y = z
        for _ in range(n):
            y = pmap.point(y)
        return y - z

    for _ in range(iters):
        f = F(x)
        J = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = fd * max(1.0, abs(x[k]))
            J[:, k] = (F(x + e) - F(x - e)) / (2 * e[k])
        dx = np.linalg.solve(J, -f)
        x = x + dx
        if np.max(np.abs(dx)) < 1e-14 * max(1.0, np.max(np.abs(x))):
            break
    return x


def certify_periodic_orbit(system, section, hsets, w, cfg=None, relations=None, pmap=None,
                           radii=(1e-9, 1e-8, 1e-7, 1e-6, 1e-5), x_guess=None) -> PeriodicOrbitCertificate:
    """Krawczyk proof of a unique period-``len(w)`` point of ``P`` near the
    float periodic orbit with itinerary ``w``.

    ``K(X) = x - C F(x) + (I - C DF(X)) (X - x)`` with ``F = P^n - id``;
    ``K(X)`` inside the interior of ``X`` proves a unique zero in ``X``.  The
    enclosures of ``P^j(X)`` are checked to lie in the h-sets of the word.
    """
    w = w if isinstance(w, Word) else Word(tuple(w), True)
    w = Word(w.symbols, True)
    if not len(w):
        raise NotAdmissible("empty word")
    if relations is not None and not _admissible_via(w, relations):
        raise NotAdmissible(f"word {w} is not cyclically admissible for the covering relations")
    pmap = pmap or PoincareSectionMap(system, section, cfg)
    n = len(w)
    x = np.asarray(x_guess, float) if x_guess is not None else _float_guess(pmap, hsets, w)
    x = _newton(pmap, x, n)
    xi = IArray(x)
    eye = IArray(np.eye(2))
    last_err = "no radius tried"
    for rho in radii:
        X = IArray(x - rho, x + rho)
        X = IArray(np.minimum(X.lo, np.nextafter(x, -np.inf)), np.maximum(X.hi, np.nextafter(x, np.inf)))
        try:
            # F at the centre
            Y = xi
            for _ in range(n):
                Y, _ = pmap.enclose(Y)
            Fx = Y - xi
            # derivative over X and the orbit of X
            orbit = [X]
            Z = X
            D = eye
            for _ in range(n):
                Z, DP = pmap.enclose(Z)
                D = imatmul(DP, D)
                orbit.append(Z)
        except Exception as err:  # integration faults: try another radius
            last_err = f"{type(err).__name__}: {err}"
            continue
        DF = D - eye
        C = np.linalg.inv(DF.mid())
        K = xi - imatmul(IArray(C), Fx) + imatmul(eye - imatmul(IArray(C), DF), X - xi)
        inside = bool(np.all(X.lo < K.lo) and np.all(K.hi < X.hi))
        in_sets = all(
            _box_in_hset(hsets[w.symbols[j % n]], orbit[j]) for j in range(n + 1)
        )
        if inside and in_sets:
            box, _ = K.intersect(X)
            ratio = float(np.max(K.width() / X.width()))
            return PeriodicOrbitCertificate(w, Box.from_iarray(box), Box.from_iarray(X), Box.from_iarray(K),
                                            [Box.from_iarray(o) for o in orbit], float(rho), ratio)
        last_err = "K(X) not inside X" if not inside else "orbit leaves the h-sets"
    raise NewtonInconclusive(f"Krawczyk test failed for word {w}: {last_err}")


def _box_in_hset(N, X: IArray) -> bool:
    ch = imatmul(N.chart_enclosure(), X - IArray(np.array(N.center)))
    return bool(np.all(ch.mag() < 1.0))


# ---------------------------------------------------------------------------
# witness trajectories (non-rigorous)


def make_perturbation(spec, delta: float):
    """Perturbation ``eps(t)`` from a named sample.

    ``"zero"`` or ``("sinusoid", omega, amp)`` with ``amp <= delta``, giving
    ``amp * (sin(w t), sin(w t + 1), sin(w t + 2))`` (sup-norm <= amp).
    """
    if spec is None or spec == "zero":
        return None
    name, omega, amp = spec
    if name != "sinusoid":
        raise ValueError(f"unknown perturbation {name!r}")
    if amp > delta:
        raise ValueError(f"perturbation amplitude {amp} exceeds delta {delta}")
    omega, amp = float(omega), float(amp)

    def eps(t):
        return amp * np.sin(omega * t + np.array([0.0, 1.0, 2.0]))

    return eps


@dataclass
class WitnessResult:
    word: Word
    times: np.ndarray  # crossing times, times[0] = t0
    points: np.ndarray  # section points (free coordinates)
    charts: np.ndarray  # chart coordinates in the prescribed h-sets
    trajectory: tuple = field(default=(None, None))  # (ts, xs) dense float trajectory
    rigorous: bool = False


def witness_trajectory(system, section, hsets, w, delta: float = 0.0, perturbation="zero", t0: float = 0.0,
                       relations=None, grid: int = 48, h: float = 0.01, max_bisect: int = 40, level: float = 0.999, tol: float = 0.01,
                       record: bool = False) -> WitnessResult:
    """Shoot for a perturbed solution visiting ``N_{w_0}, N_{w_1}, ...`` in order.

    The start lies on the unstable segment ``q = 0`` of ``N_{w_0}``.  For each
    further symbol the interval of admissible starts is cut down, by grid
    bisection on the start's unstable coordinate, to the part whose next
    crossing sweeps across ``N_{w_j}`` between the chart levels ``-level`` and
    ``level``.  NOT a proof: plain floating point RK4.
    """
    from .poincare import float_returns

    w = w if isinstance(w, Word) else Word(tuple(w))
    s = w.symbols
    if relations is not None:
        rel = {(int(a), int(b)) for a, b in relations}
        if any((a, b) not in rel for a, b in zip(s, s[1:])):
            raise NotAdmissible(f"word {w} is not admissible for the covering relations")
    eps = make_perturbation(perturbation, delta)
    N0 = hsets[s[0]]
    i = section.coord_index
    free = list(section.free)

    def starts(p):
        x = N0.inverse_chart(np.column_stack([p, np.zeros_like(p)]))
        X = np.full((len(p), section.dim), float(section.value))
        X[:, free] = x
        return X

    def pj(p, j):
        ts, pts = float_returns(system, section, starts(p), j, t0, h, t_max=8.0 * j + 10.0, perturbation=eps)
        y = pts[:, j - 1][:, free]
        out = np.full((len(p), 2), np.nan)
        good = np.all(np.isfinite(y), axis=1)
        if good.any():
            out[good] = hsets[s[j]].chart(y[good])
        return out

    a, b = -1.0, 1.0
    for j in range(1, len(s)):
        ends = pj(np.array([a, b]), j)[:, 0]
        if not np.all(np.isfinite(ends)) or not (ends[0] * ends[1] < 0 and min(abs(ends[0]), abs(ends[1])) > level):
            raise ShadowingFailed(f"symbol {j}: end images {ends} do not straddle {hsets[s[j]].name}")
        # both ends are refined together: one vectorised simulation per round
        levs = [math.copysign(level, ends[0]), math.copysign(level, ends[1])]
        brk = [[a, b], [b, a]]  # [outside end, far end] for each side
        done = [False, False]
        inner = [None, None]
        steps = 0
        while not all(done) and steps < max_bisect:
            act = [e for e in (0, 1) if not done[e]]
            gs = [np.linspace(brk[e][0], brk[e][1], grid) for e in act]
            v = pj(np.concatenate(gs), j)[:, 0]
            for n_e, e in enumerate(act):
                ve = v[n_e * grid:(n_e + 1) * grid]
                outside = ((np.abs(ve) >= level) & (np.sign(ve) == np.sign(levs[e]))) | ~np.isfinite(ve)
                if outside.all():
                    raise ShadowingFailed(f"symbol {j}: image never enters {hsets[s[j]].name}")
                k = int(np.argmin(outside))
                if k == 0:
                    raise ShadowingFailed(f"symbol {j}: lost the straddle while bisecting")
                brk[e] = [gs[n_e][k - 1], gs[n_e][k]]
                inner[e] = gs[n_e][k]  # inner side: |p_j| < level
                if abs(ve[k] - levs[e]) < tol or brk[e][0] == brk[e][1]:
                    done[e] = True
            steps += int(math.ceil(math.log2(grid - 1)))
        a, b = inner

    p_star = np.array([0.5 * (a + b)])
    out = float_returns(system, section, starts(p_star), max(len(s) - 1, 1), t0, h,
                        t_max=8.0 * len(s) + 10.0, perturbation=eps, record=record)
    ts, pts = out[0], out[1]
    times = [t0]
    points = [starts(p_star)[0, free]]
    for j in range(1, len(s)):
        times.append(ts[0, j - 1])
        points.append(pts[0, j - 1, free])
    points = np.array(points)
    times = np.array(times)
    charts = np.array([hsets[s[j]].chart(points[j]) for j in range(len(s))])
    if not np.all(np.isfinite(charts)) or np.any(np.abs(charts) >= 1.0):
        bad = int(np.argmax(~np.isfinite(charts).all(axis=1) | (np.abs(charts) >= 1).any(axis=1)))
        raise ShadowingFailed(f"crossing {bad} misses the interior of {hsets[s[bad]].name}")
    if np.any(np.diff(times) <= 0):
        raise ShadowingFailed("crossing times are not increasing")
    traj = (None, None)
    if record:
        rt, rx = out[2]
        traj = (rt, rx[0])
    return WitnessResult(w, times, points, charts, traj)
