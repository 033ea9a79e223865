"""Taylor coefficients of solutions by recurrences over a traced tape.

For ``u' = f(u)`` the normalised coefficients satisfy
``u[k+1] = f(u)[k] / (k+1)``, and for a polynomial ``f`` every node of the
tape has a closed recurrence: linear nodes act coefficientwise, products are
Cauchy convolutions.  Everything here is batched over the leading axis.
"""

from __future__ import annotations

import numpy as np

from .interval import IArray, imatmul, stack

__all__ = ["TaylorSeries", "taylor_series", "variational_series", "horner"]


class TaylorSeries:
    """Coefficients ``x[k]`` (shape ``(n, d)``) and optionally ``jac[k]`` (``(n, d, d)``)."""

    def __init__(self, x, jac):
        self.x = x
        self.jac = jac

    @property
    def order(self):
        return len(self.x) - 1

    def rows(self, sl):
        return TaylorSeries(
            [c[sl] for c in self.x],
            None if self.jac is None else [None if j is None else j[sl] for j in self.jac],
        )


def _conv(a, b, k):
    pairs = [(a[j], b[k - j]) for j in range(k + 1) if a[j] is not None and b[k - j] is not None]
    if not pairs:
        return None
    if len(pairs) == 1:
        return pairs[0][0] * pairs[0][1]
    A = stack([p[0] for p in pairs])
    B = stack([p[1] for p in pairs])
    return (A * B).sum(axis=0)


def _lin(op, a, b):
    if op == "add":
        if a is None:
            return b
        if b is None:
            return a
        return a + b
    # sub
    if b is None:
        return a
    if a is None:
        return -b
    return a - b


def taylor_series(system, X: IArray, order: int, jacobian: bool = False) -> TaylorSeries:
    """Interval Taylor coefficients up to ``order`` at initial data ``X`` (``(n, d)``).

    With ``jacobian=True`` the coefficients of the Jacobian along the solution
    are returned for orders ``0..order-1`` (what the variational recurrence
    needs to reach ``order``).
    """
    tape = system.tape
    d = system.dimension
    n = X.shape[0]
    nodes = tape.nodes
    outs = tape.outputs
    field_out = outs[:d]
    jac_out = outs[d:] if jacobian else []
    ser: list[list] = [[] for _ in nodes]
    var_ser = [[X[:, i]] for i in range(d)]
    const_cache = {}

    for k in range(order + 1):
        need_field = k < order
        for node in nodes:
            s = ser[node.index]
            op = node.op
            if op == "var":
                s.append(var_ser[node.const][k])
            elif op == "const":
                if k == 0:
                    iv = node.const
                    if node.index not in const_cache:
                        const_cache[node.index] = IArray(np.full(n, iv.lo), np.full(n, iv.hi))
                    s.append(const_cache[node.index])
                else:
                    s.append(None)
            elif op in ("add", "sub"):
                a, b = node.args
                s.append(_lin(op, ser[a.index][k], ser[b.index][k]))
            elif op == "neg":
                a = ser[node.args[0].index][k]
                s.append(None if a is None else -a)
            else:  # mul
                a, b = node.args
                if a.op == "const":
                    v = ser[b.index][k]
                    s.append(None if v is None else ser[a.index][0] * v)
                elif b.op == "const":
                    v = ser[a.index][k]
                    s.append(None if v is None else v * ser[b.index][0])
                else:
                    s.append(_conv(ser[a.index], ser[b.index], k))
        if need_field:
            for i, o in enumerate(field_out):
                c = ser[o.index][k]
                if c is None:
                    var_ser[i].append(IArray.zeros(n))
                else:
                    var_ser[i].append(c / float(k + 1))

    xs = [stack([var_ser[i][k] for i in range(d)], axis=-1) for k in range(order + 1)]
    jac = None
    if jacobian:
        jac = []
        for k in range(order):
            entries = [ser[o.index][k] for o in jac_out]
            if all(e is None for e in entries):
                jac.append(None)
                continue
            full = [IArray.zeros(n) if e is None else e for e in entries]
            J = stack(full, axis=-1).reshape(n, d, d)
            jac.append(J)
    return TaylorSeries(xs, jac)


def variational_series(jac, order: int, V0=None):
    """Coefficients of ``V' = Df(u(t)) V`` given the Jacobian series.

    ``V0`` defaults to the identity; returns ``[V[0], ..., V[order]]``.
    """
    J0 = jac[0]
    n, d, _ = J0.shape
    if V0 is None:
        eye = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        V0 = IArray(eye, eye.copy())
    V = [V0]
    for k in range(order):
        acc = None
        for j in range(k + 1):
            Jj = jac[j] if j < len(jac) else None
            if Jj is None:
                continue
            term = imatmul(Jj, V[k - j])
            acc = term if acc is None else acc + term
        if acc is None:
            V.append(IArray.zeros((n, d, d)))
        else:
            V.append(acc / float(k + 1))
    return V


def horner(coefs, t):
    """Evaluate ``sum_k coefs[k] * t**k`` for interval or float ``t``.

    ``t`` may be a float (point time), an ``IArray`` broadcastable against the
    coefficients, or ``(lo, hi)`` with ``0 <= lo``.
    """
    acc = coefs[-1]
    for c in reversed(coefs[:-1]):
        acc = acc * t + c
    return acc
