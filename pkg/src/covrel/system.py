"""Autonomous polynomial vector fields.

A system is described once by a plain Python function ``rhs(u, p)`` written
with ``+``, ``-``, ``*`` only.  The same function is

* called on ``Interval`` objects to get interval extensions (``eval_field``),
* called on float arrays for non-rigorous simulation,
* traced into a small expression tape that drives the Taylor recurrences
  in :mod:`covrel.taylor`.

Parameters are given as decimal strings (or floats) and enclosed in tight
intervals, so a value like ``5.7`` means the decimal number, not its binary
neighbour.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .interval import Box, IArray, Interval, add_ru, sum_ru

__all__ = [
    "OdeSystem",
    "RosslerParams",
    "rossler",
    "linear_decay",
    "constant_field",
    "planar_rotation",
    "zero_field",
    "eval_field",
    "eval_jacobian",
    "lognorm_bound",
    "SYSTEMS",
]


# ---------------------------------------------------------------------------
# expression tape


class Node:
    """One operation of a traced polynomial expression."""

    __slots__ = ("tape", "op", "args", "const", "index")

    def __init__(self, tape, op, args=(), const=None):
        self.tape = tape
        self.op = op
        self.args = args
        self.const = const
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    def _lift(self, other):
        if isinstance(other, Node):
            return other
        return self.tape.constant(other)

    def __add__(self, o):
        return Node(self.tape, "add", (self, self._lift(o)))

    __radd__ = __add__

    def __sub__(self, o):
        return Node(self.tape, "sub", (self, self._lift(o)))

    def __rsub__(self, o):
        return Node(self.tape, "sub", (self._lift(o), self))

    def __mul__(self, o):
        return Node(self.tape, "mul", (self, self._lift(o)))

    __rmul__ = __mul__

    def __neg__(self):
        return Node(self.tape, "neg", (self,))

    def is_const(self):
        return self.op == "const"


class Tape:
    def __init__(self, nvars: int):
        self.nodes: list[Node] = []
        self.vars = [Node(self, "var", const=i) for i in range(nvars)]
        self.outputs: list[Node] = []

    def constant(self, value) -> Node:
        if isinstance(value, Interval):
            iv = value
        else:
            iv = Interval.point(value)
        return Node(self, "const", const=iv)


def trace(rhs: Callable, dim: int, params: Mapping[str, Interval], jac: Callable | None = None):
    """Trace ``rhs`` (and optionally ``jac``) into a tape.

    Outputs are the field components followed, when ``jac`` is given, by the
    row-major Jacobian entries.  Constant outputs are allowed.
    """
    tape = Tape(dim)
    out = list(rhs(tape.vars, params))
    if len(out) != dim:
        raise ValueError(f"rhs returned {len(out)} components, expected {dim}")
    if jac is not None:
        J = jac(tape.vars, params)
        for row in J:
            if len(row) != dim:
                raise ValueError("jacobian must be square")
            out.extend(row)
    tape.outputs = [o if isinstance(o, Node) else tape.constant(o) for o in out]
    return tape


def _derivative_tape(rhs, dim, params):
    """Jacobian by forward differentiation of the traced rhs."""
    tape = Tape(dim)
    out = [o if isinstance(o, Node) else tape.constant(o) for o in rhs(tape.vars, params)]
    zero = None
    rows = []
    for i in range(dim):
        rows.append([None] * dim)
    for j in range(dim):
        d: dict[int, object] = {}
        for node in list(tape.nodes):
            if node.op == "var":
                d[node.index] = 1.0 if node.const == j else zero
            elif node.op == "const":
                d[node.index] = zero
            elif node.op in ("add", "sub"):
                a, b = (d.get(x.index) for x in node.args)
                if node.op == "sub" and b is not None:
                    b = -b if isinstance(b, Node) else -b
                d[node.index] = _dsum(a, b)
            elif node.op == "neg":
                a = d.get(node.args[0].index)
                d[node.index] = None if a is None else -a
            elif node.op == "mul":
                x, y = node.args
                da, db = d.get(x.index), d.get(y.index)
                t1 = None if da is None else _dmul(da, y)
                t2 = None if db is None else _dmul(db, x)
                d[node.index] = _dsum(t1, t2)
        for i, o in enumerate(out):
            rows[i][j] = d.get(o.index)
    return [[0.0 if e is None else e for e in row] for row in rows]


def _dsum(a, b):
    if a is None:
        return b
    if b is None:
        return a
    if not isinstance(a, Node) and not isinstance(b, Node):
        return a + b
    return a + b


def _dmul(da, y):
    if not isinstance(da, Node) and da == 1.0:
        return y
    return da * y


# ---------------------------------------------------------------------------
# systems


@dataclass
class OdeSystem:
    """Autonomous ODE ``u' = rhs(u)`` with polynomial right-hand side.

    ``jacobian_rhs`` is optional; when missing the Jacobian is obtained by
    differentiating the traced expression.
    """

    name: str
    dimension: int
    rhs: Callable
    params: Mapping[str, object] = field(default_factory=dict)
    jacobian_rhs: Callable | None = None

    def __post_init__(self):
        self.iparams = {k: _param_interval(v) for k, v in self.params.items()}
        self.fparams = {k: iv.midpoint for k, iv in self.iparams.items()}
        self._tape = None
        self._jac_exprs = None

    # interval extensions -------------------------------------------------
    def field(self, B) -> Box:
        comps = list(B)
        out = self.rhs(comps, self.iparams)
        return Box(_as_interval(o) for o in out)

    def jacobian(self, B) -> list[list[Interval]]:
        comps = list(B)
        J = self._jacobian_values(comps, self.iparams)
        return [[_as_interval(e) for e in row] for row in J]

    def _jacobian_values(self, comps, params):
        if self.jacobian_rhs is not None:
            return self.jacobian_rhs(comps, params)
        exprs = self.jacobian_exprs
        return [[_eval_expr(e, comps, params) for e in row] for row in exprs]

    @property
    def jacobian_exprs(self):
        if self._jac_exprs is None:
            self._jac_exprs = _derivative_tape(self.rhs, self.dimension, self.iparams)
        return self._jac_exprs

    # vectorised evaluations ----------------------------------------------
    def field_iarray(self, X: IArray) -> IArray:
        """Field on an interval array of shape ``(..., dim)``."""
        comps = [X[..., i] for i in range(self.dimension)]
        out = self.rhs(comps, {k: IArray(v.lo, v.hi) for k, v in self.iparams.items()})
        return _stack_last([_lift_ia(o, X.shape[:-1]) for o in out])

    def jacobian_iarray(self, X: IArray) -> IArray:
        comps = [X[..., i] for i in range(self.dimension)]
        ip = {k: IArray(v.lo, v.hi) for k, v in self.iparams.items()}
        J = self._jacobian_values(comps, ip)
        rows = [_stack_last([_lift_ia(e, X.shape[:-1]) for e in row]) for row in J]
        return IArray(np.stack([r.lo for r in rows], -2), np.stack([r.hi for r in rows], -2))

    def field_float(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        comps = [u[..., i] for i in range(self.dimension)]
        out = np.empty(u.shape)
        for k, o in enumerate(self.rhs(comps, self.fparams)):
            out[..., k] = o
        return out

    def jacobian_float(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        comps = [u[..., i] for i in range(self.dimension)]
        if self.jacobian_rhs is not None:
            J = self.jacobian_rhs(comps, self.fparams)
        else:
            J = [[_eval_expr(e, comps, self.fparams) for e in row] for row in self.jacobian_exprs]
        return np.stack(
            [np.stack([np.broadcast_to(np.asarray(e, float), u.shape[:-1]) for e in row], -1) for row in J],
            -2,
        )

    @property
    def tape(self) -> Tape:
        """Tape with field components then Jacobian entries as outputs."""
        if self._tape is None:
            if self.jacobian_rhs is not None:
                self._tape = trace(self.rhs, self.dimension, self.iparams, self.jacobian_rhs)
            else:
                self._tape = _trace_with_derived_jacobian(self)
        return self._tape

    def negated(self) -> "OdeSystem":
        """Time-reversed system (tests only use this)."""
        rhs, jac = self.rhs, self.jacobian_rhs
        neg_jac = None
        if jac is not None:
            neg_jac = lambda u, p: [[-e for e in row] for row in jac(u, p)]  # noqa: E731
        return OdeSystem(
            self.name + "-reversed",
            self.dimension,
            lambda u, p: [-c for c in rhs(u, p)],
            dict(self.params),
            neg_jac,
        )


def _trace_with_derived_jacobian(system: OdeSystem) -> Tape:
    def jac(u, p):
        tape = u[0].tape
        exprs = system.jacobian_exprs
        return [[_replay(e, u, p, tape) for e in row] for row in exprs]

    return trace(system.rhs, system.dimension, system.iparams, jac)


def _replay(expr, u, p, tape):
    """Re-express a derivative expression (built on another tape) on ``tape``."""
    if not isinstance(expr, Node):
        return expr
    memo: dict[int, object] = {}

    def go(n):
        if n.index in memo:
            return memo[n.index]
        if n.op == "var":
            r = u[n.const]
        elif n.op == "const":
            r = tape.constant(n.const)
        elif n.op == "add":
            r = go(n.args[0]) + go(n.args[1])
        elif n.op == "sub":
            r = go(n.args[0]) - go(n.args[1])
        elif n.op == "mul":
            r = go(n.args[0]) * go(n.args[1])
        else:
            r = -go(n.args[0])
        memo[n.index] = r
        return r

    return go(expr)


def _eval_expr(expr, comps, params):
    if not isinstance(expr, Node):
        return expr
    memo = {}

    def go(n):
        if n.index in memo:
            return memo[n.index]
        if n.op == "var":
            r = comps[n.const]
        elif n.op == "const":
            c = n.const
            r = c if not isinstance(comps[0], np.ndarray) else c.midpoint
            if isinstance(comps[0], IArray):
                r = IArray(c.lo, c.hi)
        elif n.op == "add":
            r = go(n.args[0]) + go(n.args[1])
        elif n.op == "sub":
            r = go(n.args[0]) - go(n.args[1])
        elif n.op == "mul":
            r = go(n.args[0]) * go(n.args[1])
        else:
            r = -go(n.args[0])
        memo[n.index] = r
        return r

    return go(expr)


def _param_interval(v) -> Interval:
    if isinstance(v, Interval):
        return v
    if isinstance(v, (list, tuple)):
        return Interval.make(*v)
    return Interval.point(v)


def _as_interval(x) -> Interval:
    if isinstance(x, Interval):
        return x
    return Interval.point(x)


def _lift_ia(x, shape) -> IArray:
    if isinstance(x, IArray):
        if x.shape != shape:
            return IArray(np.broadcast_to(x.lo, shape).copy(), np.broadcast_to(x.hi, shape).copy())
        return x
    if isinstance(x, Interval):
        return IArray(np.full(shape, x.lo), np.full(shape, x.hi))
    iv = Interval.point(x)
    return IArray(np.full(shape, iv.lo), np.full(shape, iv.hi))


def _stack_last(items):
    return IArray(np.stack([i.lo for i in items], -1), np.stack([i.hi for i in items], -1))


# ---------------------------------------------------------------------------
# concrete fields


def _rossler_rhs(u, p):
    x, y, z = u
    a, b = p["a"], p["b"]
    return [-(y + z), x + b * y, b + z * (x - a)]


def _rossler_jac(u, p):
    x, y, z = u
    a, b = p["a"], p["b"]
    return [
        [0.0, -1.0, -1.0],
        [1.0, b, 0.0],
        [z, 0.0, x - a],
    ]


@dataclass(frozen=True)
class RosslerParams:
    a: str = "5.7"
    b: str = "0.2"


def rossler(params: RosslerParams | None = None, **kw) -> OdeSystem:
    params = params or RosslerParams(**{k: str(v) for k, v in kw.items()})
    return OdeSystem("rossler", 3, _rossler_rhs, {"a": params.a, "b": params.b}, _rossler_jac)


def linear_decay(dim: int = 1, rate="1") -> OdeSystem:
    """``u' = -rate * u`` componentwise."""

    def rhs(u, p):
        return [-(p["k"] * c) for c in u]

    return OdeSystem("linear-decay", dim, rhs, {"k": rate})


def constant_field(c) -> OdeSystem:
    c = [str(v) if not isinstance(v, str) else v for v in c]
    names = [f"c{i}" for i in range(len(c))]

    def rhs(u, p):
        return [p[n] for n in names]

    return OdeSystem("constant", len(c), rhs, dict(zip(names, c)))


def zero_field(dim: int = 3) -> OdeSystem:
    def rhs(u, p):
        return [0.0] * dim

    return OdeSystem("zero", dim, rhs, {})


def planar_rotation(dim: int = 2) -> OdeSystem:
    """``x' = -y, y' = x`` (plus ``w' = 0`` for any extra coordinates)."""

    def rhs(u, p):
        return [-u[1], u[0]] + [0.0] * (dim - 2)

    return OdeSystem("rotation", dim, rhs, {})


SYSTEMS = {"rossler": rossler}


# ---------------------------------------------------------------------------
# operations


def eval_field(params: RosslerParams, B) -> Box:
    return rossler(params).field(B)


def eval_jacobian(params: RosslerParams, B) -> list[list[Interval]]:
    return rossler(params).jacobian(B)


def lognorm_bound(J) -> float:
    """Upper bound of the logarithmic infinity-norm over an interval matrix.

    ``mu(M) = max_i (M_ii + sum_{j != i} |M_ij|)``; the bound uses the upper
    end of each diagonal entry and the magnitude of each off-diagonal one.
    """
    if isinstance(J, IArray):
        lo, hi = J.lo, J.hi
    else:
        rows = [list(r) for r in J]
        lo = np.array([[_as_interval(e).lo for e in r] for r in rows], dtype=float)
        hi = np.array([[_as_interval(e).hi for e in r] for r in rows], dtype=float)
    n = lo.shape[-1]
    if lo.shape[-2] != n:
        raise ValueError("lognorm_bound needs a square matrix")
    mag = np.maximum(np.abs(lo), np.abs(hi))
    terms = mag.copy()
    idx = np.arange(n)
    terms[..., idx, idx] = hi[..., idx, idx]
    row = sum_ru(np.moveaxis(terms, -1, 0), 0)
    return float(np.max(row))
