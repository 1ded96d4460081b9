"""Polynomial vector fields with exact rational coefficients.

Independent check on :func:`hypospde.tensor.lie_bracket`: brackets here are
computed by formal differentiation, ``[P, Q] = DQ . P - DP . Q``.
"""

from __future__ import annotations

from collections import Counter
from fractions import Fraction
from math import factorial

import sympy as sp

from .tensor import PolySum


def variables(n: int):
    return sp.symbols(f"x1:{n + 1}")


def vectorfield(components, gens) -> tuple:
    """Tuple of ``sympy.Poly`` over QQ, one per component."""
    return tuple(sp.Poly(c, *gens, domain=sp.QQ) for c in components)


def from_polymap(G, gens) -> tuple:
    """The field ``u -> G(u, ..., u)`` (PolyMap or PolySum) as sympy polys."""
    terms = G.terms if isinstance(G, PolySum) else (G,)
    n = len(gens)
    comps = [sp.Integer(0)] * n
    for t in terms:
        for (i, J), c in t.coeffs.items():
            # G(u,...,u)_i sums the tensor entry over every ordering of J.
            c = Fraction(c)
            mono = sp.Mul(*[gens[j] for j in J])
            comps[i] += sp.Rational(c.numerator, c.denominator) * _orderings(J) * mono
    return vectorfield(comps, gens)


def _orderings(J) -> int:
    out = factorial(len(J))
    for m in Counter(J).values():
        out //= factorial(m)
    return out


def symbolic_vectorfield_bracket(P, Q) -> tuple:
    """Classical bracket ``DQ . P - DP . Q`` of two polynomial vector fields."""
    if len(P) != len(Q):
        raise ValueError(f"dimension mismatch: {len(P)} vs {len(Q)}")
    if not P:
        return ()
    gens = P[0].gens
    n = len(P)
    out = []
    for i in range(n):
        acc = sp.Poly(0, *gens, domain=sp.QQ)
        for j in range(n):
            acc += Q[i].diff(gens[j]) * P[j] - P[i].diff(gens[j]) * Q[j]
        out.append(acc)
    return tuple(out)


def evaluate_field(P, point) -> list:
    """Evaluate each component at ``point`` (exact when the point is rational)."""
    pt = [sp.Rational(Fraction(x).numerator, Fraction(x).denominator) for x in point]
    return [p.eval(tuple(pt)) if p.gens else p.as_expr() for p in P]
