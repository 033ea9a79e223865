"""Outward-rounded interval arithmetic.

Two layers live here:

* ``IArray`` -- a vectorised interval array (numpy ``lo``/``hi`` pairs with
  broadcasting).  The integrator and everything above it run on this.
* ``Interval`` / ``Box`` -- small immutable scalar and vector types used at
  API boundaries, in configs and in reports.

Outward rounding has two interchangeable realisations, picked by one switch
(``set_rounding`` or the ``COVREL_ROUNDING`` environment variable):

``"directed"``
    Emulates round-toward-minus/plus-infinity exactly with error-free
    transformations (TwoSum, Veltkamp TwoProduct, exact division residual).
    A bound is moved by one ulp only when the float result is inexact in the
    wrong direction, so exact endpoint arithmetic stays exact.
``"ulp"``
    Post-hoc inflation: every computed bound is pushed one ulp outward.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "IArray",
    "Interval",
    "Box",
    "EMPTY",
    "DivisionByContainedZero",
    "DimensionMismatch",
    "set_rounding",
    "get_rounding",
    "rounding",
    "exp_upper",
    "exp_lower",
    "imatmul",
    "point_inverse_enclosure",
]

_INF = math.inf
_SPLIT = 134217729.0  # 2**27 + 1, Veltkamp splitter
_SAFE_MAX = 2.0**995
_SAFE_MIN = 2.0**-968

_MODES = ("directed", "ulp")
_mode = os.environ.get("COVREL_ROUNDING", "ulp")
if _mode not in _MODES:
    raise ValueError(f"COVREL_ROUNDING must be one of {_MODES}, got {_mode!r}")


class DivisionByContainedZero(ZeroDivisionError):
    """Raised when an interval divisor contains zero."""


class DimensionMismatch(ValueError):
    pass


def set_rounding(mode: str) -> None:
    global _mode
    if mode not in _MODES:
        raise ValueError(f"rounding mode must be one of {_MODES}, got {mode!r}")
    _mode = mode


def get_rounding() -> str:
    return _mode


class rounding:
    """Context manager that temporarily switches the rounding realisation."""

    def __init__(self, mode: str):
        self.mode = mode
        self._saved = None

    def __enter__(self):
        self._saved = get_rounding()
        set_rounding(self.mode)
        return self

    def __exit__(self, *exc):
        set_rounding(self._saved)
        return False


# ---------------------------------------------------------------------------
# directed-rounding kernels on float64 arrays


def _down(x):
    return np.nextafter(x, -_INF)


def _up(x):
    return np.nextafter(x, _INF)


def _two_sum_err(a, b, s):
    bb = s - a
    return (a - (s - bb)) + (b - bb)


def _two_prod_err(a, b, p):
    c = _SPLIT * a
    ah = c - (c - a)
    al = a - ah
    c = _SPLIT * b
    bh = c - (c - b)
    bl = b - bh
    return ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _safe_for_eft(*xs):
    ok = np.ones(np.broadcast(*xs).shape, dtype=bool)
    for x in xs:
        ax = np.abs(x)
        ok &= np.isfinite(x) & (ax < _SAFE_MAX)
    return ok


def add_rd(a, b):
    s = a + b
    if _mode == "ulp":
        return _down(s)
    with np.errstate(invalid="ignore", over="ignore"):
        e = _two_sum_err(a, b, s)
    return np.where(np.isfinite(e), np.where(e < 0, _down(s), s), _down(s))


def add_ru(a, b):
    s = a + b
    if _mode == "ulp":
        return _up(s)
    with np.errstate(invalid="ignore", over="ignore"):
        e = _two_sum_err(a, b, s)
    return np.where(np.isfinite(e), np.where(e > 0, _up(s), s), _up(s))


def _mul_err(a, b, p):
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        e = _two_prod_err(a, b, p)
    ok = _safe_for_eft(a, b) & ((np.abs(p) > _SAFE_MIN) | (p == 0))
    # p == 0 with nonzero factors means underflow; not exact
    ok &= ~((p == 0) & (a != 0) & (b != 0))
    return e, ok


def mul_rd(a, b):
    p = a * b
    if _mode == "ulp":
        return _down(p)
    e, ok = _mul_err(a, b, p)
    return np.where(ok, np.where(e < 0, _down(p), p), _down(p))


def mul_ru(a, b):
    p = a * b
    if _mode == "ulp":
        return _up(p)
    e, ok = _mul_err(a, b, p)
    return np.where(ok, np.where(e > 0, _up(p), p), _up(p))


def _div_resid(a, b, q):
    # a/b = q + r/b with r = a - q*b computed exactly
    with np.errstate(invalid="ignore", over="ignore", under="ignore"):
        p = q * b
        e = _two_prod_err(q, b, p)
        r = (a - p) - e
    ok = _safe_for_eft(a, b, q) & ((np.abs(p) > _SAFE_MIN) | (a == 0))
    return r * np.sign(b), ok


def div_rd(a, b):
    q = a / b
    if _mode == "ulp":
        return _down(q)
    r, ok = _div_resid(a, b, q)
    return np.where(ok, np.where(r < 0, _down(q), q), _down(q))


def div_ru(a, b):
    q = a / b
    if _mode == "ulp":
        return _up(q)
    r, ok = _div_resid(a, b, q)
    return np.where(ok, np.where(r > 0, _up(q), q), _up(q))


def sum_rd(x, axis=0):
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    acc = x[0]
    for k in range(1, x.shape[0]):
        acc = add_rd(acc, x[k])
    return acc


def sum_ru(x, axis=0):
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    acc = x[0]
    for k in range(1, x.shape[0]):
        acc = add_ru(acc, x[k])
    return acc


# ---------------------------------------------------------------------------
# vectorised intervals


def _as_f(x):
    return np.asarray(x, dtype=float)


class IArray:
    """Array of closed intervals ``[lo, hi]`` with numpy broadcasting."""

    __slots__ = ("lo", "hi")
    __array_priority__ = 100

    def __init__(self, lo, hi=None):
        lo = _as_f(lo)
        hi = lo if hi is None else _as_f(hi)
        if lo.shape != hi.shape:
            lo, hi = np.broadcast_arrays(lo, hi)
        self.lo = lo
        self.hi = hi

    # -- construction ------------------------------------------------------
    @classmethod
    def coerce(cls, x) -> "IArray":
        if isinstance(x, IArray):
            return x
        if isinstance(x, Interval):
            return cls(x.lo, x.hi)
        if isinstance(x, Box):
            return x.to_iarray()
        return cls(x)

    @classmethod
    def zeros(cls, shape):
        z = np.zeros(shape)
        return cls(z, z.copy())

    @classmethod
    def centered(cls, center, radius):
        c = _as_f(center)
        r = _as_f(radius)
        return cls(add_rd(c, -r), add_ru(c, r))

    # -- array protocol ----------------------------------------------------
    @property
    def shape(self):
        return self.lo.shape

    @property
    def ndim(self):
        return self.lo.ndim

    def __len__(self):
        return len(self.lo)

    def __getitem__(self, idx):
        return IArray(self.lo[idx], self.hi[idx])

    def __setitem__(self, idx, value):
        v = IArray.coerce(value)
        self.lo[idx] = v.lo
        self.hi[idx] = v.hi

    def copy(self):
        return IArray(self.lo.copy(), self.hi.copy())

    def reshape(self, *shape):
        return IArray(self.lo.reshape(*shape), self.hi.reshape(*shape))

    def swapaxes(self, a, b):
        return IArray(np.swapaxes(self.lo, a, b), np.swapaxes(self.hi, a, b))

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def __repr__(self):
        if self.lo.ndim == 0:
            return f"IArray[{self.lo!r}, {self.hi!r}]"
        return f"IArray(lo={self.lo!r}, hi={self.hi!r})"

    # -- arithmetic --------------------------------------------------------
    def __neg__(self):
        return IArray(-self.hi, -self.lo)

    def __pos__(self):
        return self

    def __add__(self, other):
        o = IArray.coerce(other)
        return IArray(add_rd(self.lo, o.lo), add_ru(self.hi, o.hi))

    __radd__ = __add__

    def __sub__(self, other):
        o = IArray.coerce(other)
        return IArray(add_rd(self.lo, -o.hi), add_ru(self.hi, -o.lo))

    def __rsub__(self, other):
        return IArray.coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, (IArray, Interval, Box)):
            o = _as_f(other)
            # point factor: endpoint order depends on sign
            a = np.where(o >= 0, self.lo, self.hi)
            b = np.where(o >= 0, self.hi, self.lo)
            return IArray(mul_rd(a, o), mul_ru(b, o))
        o = IArray.coerce(other)
        a, b, c, d = self.lo, self.hi, o.lo, o.hi
        if _mode == "ulp":
            p1, p2, p3, p4 = a * c, a * d, b * c, b * d
            lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
            hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
            return IArray(_down(lo), _up(hi))
        lo = np.minimum(
            np.minimum(mul_rd(a, c), mul_rd(a, d)),
            np.minimum(mul_rd(b, c), mul_rd(b, d)),
        )
        hi = np.maximum(
            np.maximum(mul_ru(a, c), mul_ru(a, d)),
            np.maximum(mul_ru(b, c), mul_ru(b, d)),
        )
        return IArray(lo, hi)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = IArray.coerce(other)
        if np.any((o.lo <= 0) & (o.hi >= 0)):
            raise DivisionByContainedZero("interval divisor contains zero")
        a, b, c, d = self.lo, self.hi, o.lo, o.hi
        lo = np.minimum(
            np.minimum(div_rd(a, c), div_rd(a, d)),
            np.minimum(div_rd(b, c), div_rd(b, d)),
        )
        hi = np.maximum(
            np.maximum(div_ru(a, c), div_ru(a, d)),
            np.maximum(div_ru(b, c), div_ru(b, d)),
        )
        return IArray(lo, hi)

    def __rtruediv__(self, other):
        return IArray.coerce(other) / self

    def sqr(self):
        alo, ahi = np.abs(self.lo), np.abs(self.hi)
        straddle = (self.lo <= 0) & (self.hi >= 0)
        mn = np.minimum(alo, ahi)
        mx = np.maximum(alo, ahi)
        lo = np.where(straddle, 0.0, np.maximum(mul_rd(mn, mn), 0.0))
        return IArray(lo, mul_ru(mx, mx))

    def abs(self):
        alo, ahi = np.abs(self.lo), np.abs(self.hi)
        straddle = (self.lo <= 0) & (self.hi >= 0)
        return IArray(np.where(straddle, 0.0, np.minimum(alo, ahi)), np.maximum(alo, ahi))

    # -- set operations ----------------------------------------------------
    def mid(self):
        m = 0.5 * self.lo + 0.5 * self.hi
        return np.where(np.isfinite(m), m, 0.0)

    def rad(self):
        """Upper bound on the radius around ``mid()``."""
        m = self.mid()
        return np.maximum(add_ru(self.hi, -m), add_ru(m, -self.lo))

    def width(self):
        return add_ru(self.hi, -self.lo)

    def mag(self):
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def hull(self, other):
        o = IArray.coerce(other)
        return IArray(np.minimum(self.lo, o.lo), np.maximum(self.hi, o.hi))

    def intersect(self, other):
        """Return ``(overlap, empty_mask)``; empty entries carry ``lo > hi``."""
        o = IArray.coerce(other)
        lo = np.maximum(self.lo, o.lo)
        hi = np.minimum(self.hi, o.hi)
        return IArray(lo, hi), lo > hi

    def contains(self, x):
        if isinstance(x, (IArray, Interval, Box)):
            o = IArray.coerce(x)
            return (self.lo <= o.lo) & (o.hi <= self.hi)
        x = _as_f(x)
        return (self.lo <= x) & (x <= self.hi)

    def interior_contains(self, other):
        o = IArray.coerce(other)
        return (self.lo < o.lo) & (o.hi < self.hi)

    def inflate(self, eps):
        eps = _as_f(eps)
        return IArray(add_rd(self.lo, -eps), add_ru(self.hi, eps))

    def hull_all(self, axis=0):
        return IArray(self.lo.min(axis=axis), self.hi.max(axis=axis))

    def sum(self, axis=0):
        return IArray(sum_rd(self.lo, axis), sum_ru(self.hi, axis))


def stack(items: Sequence[IArray], axis=0) -> IArray:
    items = [IArray.coerce(i) for i in items]
    return IArray(np.stack([i.lo for i in items], axis), np.stack([i.hi for i in items], axis))


def imatmul(a, b) -> IArray:
    """Rigorous (batched) matrix product; either factor may be a float array."""
    A = IArray.coerce(a)
    if b is not None and not isinstance(b, (IArray, Interval, Box)) and np.ndim(b) >= 1:
        B = _as_f(b)
        if B.ndim == A.ndim - 1:  # matrix @ vector
            prod = A * B[..., None, :]
            return prod.sum(axis=-1)
        prod = A[..., :, :, None] * B[..., None, :, :]
        return prod.sum(axis=-2)
    B = IArray.coerce(b)
    if B.ndim == A.ndim - 1:
        prod = A * B[..., None, :]
        return prod.sum(axis=-1)
    prod = IArray(A.lo[..., :, :, None], A.hi[..., :, :, None]) * IArray(
        B.lo[..., None, :, :], B.hi[..., None, :, :]
    )
    return prod.sum(axis=-2)


def pmatmul(a, b) -> IArray:
    """Rigorous product of a float matrix ``a`` with an interval operand ``b``."""
    A = _as_f(a)
    B = IArray.coerce(b)
    if B.ndim == A.ndim - 1:
        prod = B[..., None, :] * A
        return prod.sum(axis=-1)
    prod = IArray(B.lo[..., None, :, :], B.hi[..., None, :, :]) * A[..., :, :, None]
    return prod.sum(axis=-2)


def point_inverse_enclosure(m) -> IArray:
    """Interval matrix containing the exact inverse of the float matrix ``m``.

    Uses an approximate inverse ``R`` and the Neumann bound on ``(R m)^-1``.
    Works on stacks of square matrices.
    """
    m = _as_f(m)
    R = np.linalg.inv(m)
    n = m.shape[-1]
    E = imatmul(IArray(R), m) - np.eye(n)
    eta = sum_ru(np.moveaxis(E.mag(), -1, 0), 0).max(axis=-1)  # infinity norm
    if np.any(eta >= 0.5):
        raise np.linalg.LinAlgError("matrix too ill-conditioned for inverse enclosure")
    rnorm = sum_ru(np.moveaxis(np.abs(R), -1, 0), 0).max(axis=-1)
    bound = div_ru(mul_ru(eta, rnorm), add_rd(1.0, -eta))
    return IArray(R).inflate(bound[..., None, None])


# ---------------------------------------------------------------------------
# scalar types


def _to_float_lo(x) -> float:
    if isinstance(x, str):
        x = Fraction(x)
    if isinstance(x, Fraction):
        f = float(x)
        return f if Fraction(f) <= x else math.nextafter(f, -_INF)
    return float(x)


def _to_float_hi(x) -> float:
    if isinstance(x, str):
        x = Fraction(x)
    if isinstance(x, Fraction):
        f = float(x)
        return f if Fraction(f) >= x else math.nextafter(f, _INF)
    return float(x)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, x) -> "Interval":
        """Tightest interval around ``x`` (float, Fraction or decimal string)."""
        return cls(_to_float_lo(x), _to_float_hi(x))

    @classmethod
    def make(cls, lo, hi=None) -> "Interval":
        if hi is None:
            return cls.point(lo)
        return cls(_to_float_lo(lo), _to_float_hi(hi))

    @classmethod
    def _wrap(cls, ia: IArray) -> "Interval":
        return cls(float(ia.lo), float(ia.hi))

    def _ia(self):
        return IArray(self.lo, self.hi)

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __add__(self, o):
        if _foreign(o):
            return NotImplemented
        return Interval._wrap(self._ia() + _scalar(o))

    __radd__ = __add__

    def __sub__(self, o):
        if _foreign(o):
            return NotImplemented
        return Interval._wrap(self._ia() - _scalar(o))

    def __rsub__(self, o):
        if _foreign(o):
            return NotImplemented
        return Interval._wrap(_scalar(o) - self._ia())

    def __mul__(self, o):
        if _foreign(o):
            return NotImplemented
        return Interval._wrap(self._ia() * _scalar(o))

    __rmul__ = __mul__

    def __truediv__(self, o):
        if _foreign(o):
            return NotImplemented
        return Interval._wrap(self._ia() / _scalar(o))

    def __rtruediv__(self, o):
        if _foreign(o):
            return NotImplemented
        return Interval._wrap(_scalar(o) / self._ia())

    def sqr(self):
        return Interval._wrap(self._ia().sqr())

    def __abs__(self):
        return Interval._wrap(self._ia().abs())

    @property
    def width(self) -> float:
        return float(add_ru(np.float64(self.hi), -np.float64(self.lo)))

    @property
    def midpoint(self) -> float:
        return float(self._ia().mid())

    @property
    def mag(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def contains(self, x) -> bool:
        if isinstance(x, Interval):
            return self.lo <= x.lo and x.hi <= self.hi
        if isinstance(x, Fraction):
            return Fraction(self.lo) <= x <= Fraction(self.hi)
        return self.lo <= x <= self.hi

    __contains__ = contains

    def hull(self, o: "Interval") -> "Interval":
        return Interval(min(self.lo, o.lo), max(self.hi, o.hi))

    def intersect(self, o: "Interval"):
        lo, hi = max(self.lo, o.lo), min(self.hi, o.hi)
        return EMPTY if lo > hi else Interval(lo, hi)

    def inflate(self, eps: float) -> "Interval":
        return Interval._wrap(self._ia().inflate(eps))

    def to_pair(self):
        return [self.lo, self.hi]

    def __repr__(self):
        return f"[{self.lo!r}, {self.hi!r}]"


class _Empty:
    """Marker for an empty intersection (a value, not an error)."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __bool__(self):
        return False

    def __repr__(self):
        return "EMPTY"


EMPTY = _Empty()


_REALS = (int, float, np.integer, np.floating)


def _scalar(o):
    if isinstance(o, Interval):
        return o._ia()
    if isinstance(o, IArray):
        return o
    return IArray(float(o))


def _foreign(o):
    return not isinstance(o, (Interval, IArray) + _REALS)


class Box(tuple):
    """Axis-aligned box: an immutable tuple of ``Interval``."""

    def __new__(cls, components: Iterable):
        comps = []
        for c in components:
            if isinstance(c, Interval):
                comps.append(c)
            elif isinstance(c, (tuple, list)) and len(c) == 2:
                comps.append(Interval.make(*c))
            else:
                comps.append(Interval.point(c))
        return super().__new__(cls, comps)

    @classmethod
    def from_iarray(cls, ia: IArray) -> "Box":
        return cls(Interval(float(l), float(h)) for l, h in zip(ia.lo, ia.hi))

    @classmethod
    def point(cls, xs) -> "Box":
        return cls(Interval.point(x) for x in xs)

    def to_iarray(self) -> IArray:
        return IArray([c.lo for c in self], [c.hi for c in self])

    @property
    def dim(self) -> int:
        return len(self)

    @property
    def lo(self):
        return np.array([c.lo for c in self])

    @property
    def hi(self):
        return np.array([c.hi for c in self])

    @property
    def midpoint(self):
        return np.array([c.midpoint for c in self])

    @property
    def width(self):
        return np.array([c.width for c in self])

    def contains(self, x) -> bool:
        if isinstance(x, Box):
            self._check(x)
            return all(a.contains(b) for a, b in zip(self, x))
        x = list(x)
        if len(x) != len(self):
            raise DimensionMismatch(f"point of dim {len(x)} vs box of dim {len(self)}")
        return all(a.contains(v) for a, v in zip(self, x))

    def hull(self, o: "Box") -> "Box":
        self._check(o)
        return Box(a.hull(b) for a, b in zip(self, o))

    def intersect(self, o: "Box"):
        self._check(o)
        parts = [a.intersect(b) for a, b in zip(self, o)]
        if any(p is EMPTY for p in parts):
            return EMPTY
        return Box(parts)

    def inflate(self, eps: float) -> "Box":
        return Box(c.inflate(eps) for c in self)

    def _check(self, o):
        if len(o) != len(self):
            raise DimensionMismatch(f"box dims {len(self)} and {len(o)} differ")

    def __add__(self, o):  # tuple concatenation is not what anyone wants here
        return Box.from_iarray(self.to_iarray() + IArray.coerce(o))

    def __sub__(self, o):
        return Box.from_iarray(self.to_iarray() - IArray.coerce(o))

    def __repr__(self):
        return "Box(" + ", ".join(repr(c) for c in self) + ")"


# ---------------------------------------------------------------------------
# exponential bounds

_EXP_MAX = 709.782712893384


def exp_upper(x: float) -> float:
    """Upper bound on ``e**x`` within a few ulp."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("exp_upper needs a finite argument")
    if x > _EXP_MAX:
        raise OverflowError(f"exp({x}) is not representable")
    if x == 0.0:
        return 1.0
    # libm exp is accurate to < 1 ulp; two steps cover it with room to spare
    return math.nextafter(math.nextafter(math.exp(x), _INF), _INF)


def exp_lower(x: float) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("exp_lower needs a finite argument")
    if x == 0.0:
        return 1.0
    if x > _EXP_MAX:
        raise OverflowError(f"exp({x}) is not representable")
    return max(0.0, math.nextafter(math.nextafter(math.exp(x), -_INF), -_INF))
