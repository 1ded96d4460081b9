"""Symmetric multilinear maps on a finite mode space and their Lie bracket.

A :class:`PolyMap` of degree ``k`` stores one coefficient per pair
``(i, J)`` where ``i`` is an output mode and ``J`` a sorted multiset of ``k``
input modes.  The coefficient is the tensor entry ``G[i, j1, ..., jk]`` for
any ordering of ``J``; the number of distinct orderings (the multinomial
count) is applied at evaluation time.  Indices are 0-based.

Coefficients may be exact (``fractions.Fraction`` or ``int``) or floats.
Exact maps convert to float maps with :meth:`PolyMap.to_float`; there is no
conversion in the other direction.
"""

from __future__ import annotations

import ast
from collections import Counter, defaultdict
from fractions import Fraction
from functools import lru_cache
from math import factorial
from numbers import Number
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "PolyMap",
    "PolySum",
    "zero_map",
    "constant",
    "diagonal",
    "linear",
    "evaluate",
    "evaluate_directional",
    "lie_bracket",
    "bracket",
    "dumps",
    "loads",
]


@lru_cache(maxsize=None)
def multinomial(J: tuple) -> int:
    """Number of distinct orderings of the multiset ``J``."""
    out = factorial(len(J))
    for m in Counter(J).values():
        out //= factorial(m)
    return out


def _merge(a: tuple, b: tuple) -> tuple:
    return tuple(sorted(a + b))


def _remove_one(J: tuple, j) -> tuple:
    pos = J.index(j)
    return J[:pos] + J[pos + 1:]


class PolyMap:
    """Symmetric ``degree``-multilinear map from ``R^dim`` to ``R^dim``.

    ``coeffs`` maps ``(i, J)`` to a coefficient; zero coefficients are dropped
    so that equal maps have equal tables.
    """

    __slots__ = ("degree", "dim", "coeffs", "_hash")

    def __init__(self, degree: int, dim: int, coeffs: Mapping | Iterable = ()):
        if degree < 0:
            raise ValueError(f"degree must be non-negative, got {degree}")
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        table = {}
        for (i, J), c in items:
            J = tuple(sorted(J))
            if len(J) != degree:
                raise ValueError(f"multiset {J} does not have size {degree}")
            if not 0 <= i < dim or any(not 0 <= j < dim for j in J):
                raise ValueError(f"index out of range in {(i, J)} for dim {dim}")
            key = (i, J)
            table[key] = table.get(key, 0) + c
        self.degree = degree
        self.dim = dim
        self.coeffs = {k: v for k, v in table.items() if v != 0}
        if not self.coeffs:
            self.degree = 0
        self._hash = None

    # -- basic protocol ---------------------------------------------------
    def __eq__(self, other):
        if not isinstance(other, PolyMap):
            return NotImplemented
        if self.is_zero() and other.is_zero():
            return self.dim == other.dim
        return (self.degree, self.dim, self.coeffs) == (other.degree, other.dim, other.coeffs)

    def __hash__(self):
        if self._hash is None:
            if self.is_zero():
                self._hash = hash(("zero", self.dim))
            else:
                self._hash = hash((self.degree, self.dim, frozenset(self.coeffs.items())))
        return self._hash

    def __repr__(self):
        if self.is_zero():
            return f"ZeroMap(dim={self.dim})"
        return f"PolyMap(degree={self.degree}, dim={self.dim}, nnz={len(self.coeffs)})"

    def is_zero(self) -> bool:
        return not self.coeffs

    @property
    def is_exact(self) -> bool:
        return all(not isinstance(c, float) for c in self.coeffs.values())

    def __neg__(self):
        return self.scale(-1)

    def __add__(self, other):
        if not isinstance(other, PolyMap):
            return NotImplemented
        _check_dim(self, other)
        if self.is_zero():
            return other
        if other.is_zero():
            return self
        if self.degree != other.degree:
            return PolySum([self, other])
        table = dict(self.coeffs)
        for k, v in other.coeffs.items():
            table[k] = table.get(k, 0) + v
        return _make(self.degree, self.dim, table)

    def __sub__(self, other):
        return self + (-other)

    def __rmul__(self, a):
        if isinstance(a, Number):
            return self.scale(a)
        return NotImplemented

    def scale(self, a) -> "PolyMap":
        if a == 0:
            return zero_map(self.dim)
        return _make(self.degree, self.dim, {k: a * v for k, v in self.coeffs.items()})

    def to_float(self) -> "PolyMap":
        return _make(self.degree, self.dim, {k: float(v) for k, v in self.coeffs.items()})

    def constant_vector(self) -> np.ndarray:
        """Return the vector of a degree-0 map (float)."""
        if self.degree != 0:
            raise ValueError("constant_vector needs a degree-0 map")
        out = np.zeros(self.dim)
        for (i, _), c in self.coeffs.items():
            out[i] = float(c)
        return out

    def constant_entries(self) -> list:
        """Exact entries of a degree-0 map, zeros included."""
        if self.degree != 0:
            raise ValueError("constant_entries needs a degree-0 map")
        out = [Fraction(0)] * self.dim
        for (i, _), c in self.coeffs.items():
            out[i] = c
        return out

    # -- polynomial view --------------------------------------------------
    def poly(self) -> dict:
        """Coefficients of ``u -> G(u, ..., u)`` as a polynomial: ``(i, J) -> c * #orderings(J)``."""
        return {(i, J): c * multinomial(J) for (i, J), c in self.coeffs.items()}

    def by_output(self) -> dict:
        groups = defaultdict(list)
        for (i, J), c in self.poly().items():
            groups[i].append((J, c))
        return groups


def _make(degree, dim, table) -> PolyMap:
    m = PolyMap.__new__(PolyMap)
    m.degree = degree
    m.dim = dim
    m.coeffs = {k: v for k, v in table.items() if v != 0}
    m._hash = None
    if not m.coeffs:
        m.degree = 0
    return m


def _check_dim(a, b):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def zero_map(dim: int) -> PolyMap:
    """The distinguished identically-zero map (degree 0, empty table)."""
    return PolyMap(0, dim)


def constant(vec: Sequence) -> PolyMap:
    """Degree-0 map returning ``vec``."""
    return PolyMap(0, len(vec), {(i, ()): c for i, c in enumerate(vec)})


def diagonal(entries: Sequence) -> PolyMap:
    """Degree-1 map ``u -> diag(entries) u``."""
    return PolyMap(1, len(entries), {(i, (i,)): c for i, c in enumerate(entries)})


def linear(matrix) -> PolyMap:
    """Degree-1 map from a square matrix (nested sequence or array)."""
    rows = [list(r) for r in matrix]
    n = len(rows)
    return PolyMap(1, n, {(i, (j,)): rows[i][j] for i in range(n) for j in range(n)})


def _from_poly(degree, dim, poly) -> PolyMap:
    return _make(degree, dim, {(i, J): _div(c, multinomial(J)) for (i, J), c in poly.items()})


def _div(c, m):
    if m == 1:
        return c
    if isinstance(c, float):
        return c / m
    return Fraction(c) / m


def evaluate(G: PolyMap, u) -> np.ndarray:
    """Return ``G(u, ..., u)``.

    For exact maps and exact ``u`` the result is an object array of exact
    values; otherwise it is a float array.
    """
    if len(u) != G.dim:
        raise ValueError(f"vector of length {len(u)} for map of dim {G.dim}")
    exact = G.is_exact and all(not isinstance(x, float) for x in u)
    out = [0] * G.dim
    for (i, J), c in G.poly().items():
        term = c
        for j in J:
            term = term * u[j]
        out[i] = out[i] + term
    return np.array(out, dtype=object if exact else float)


def evaluate_directional(G: PolyMap, u, h) -> np.ndarray:
    """Return ``G(u, ..., u, h)``: ``k - 1`` slots at ``u``, one slot at ``h``."""
    if G.degree == 0:
        if G.is_zero():
            return np.zeros(G.dim)
        raise ValueError("evaluate_directional needs degree >= 1")
    if len(u) != G.dim or len(h) != G.dim:
        raise ValueError("dimension mismatch")
    exact = G.is_exact and all(not isinstance(x, float) for x in list(u) + list(h))
    out = [0] * G.dim
    for (i, J), c in G.coeffs.items():
        for j in set(J):
            rest = _remove_one(J, j)
            term = c * multinomial(rest) * h[j]
            for r in rest:
                term = term * u[r]
            out[i] = out[i] + term
    return np.array(out, dtype=object if exact else float)


def _slot_composition(G: PolyMap, H: PolyMap) -> dict:
    """Polynomial coefficients of ``k * G(u, ..., u, H(u))`` with ``k = G.degree``.

    The ``H(u)`` slot takes any of the ``k`` positions; fixing it last, the
    remaining multiset ``J - j`` has ``#orderings(J - j)`` arrangements.
    """
    k = G.degree
    out = defaultdict(int)
    if k == 0 or H.is_zero():
        return out
    h_by_out = H.by_output()
    for (i, J), c in G.coeffs.items():
        for j in set(J):
            hj = h_by_out.get(j)
            if not hj:
                continue
            rest = _remove_one(J, j)
            w = c * (k * multinomial(rest))
            for K, ch in hj:
                out[(i, _merge(rest, K))] += w * ch
    return out


def lie_bracket(G1: PolyMap, G2: PolyMap) -> PolyMap:
    """``[G1, G2](u) = l G2(u, ..., u, G1(u)) - k G1(u, ..., u, G2(u))``.

    ``k`` and ``l`` are the degrees of ``G1`` and ``G2``; the result is the
    symmetric map of degree ``k + l - 1``, or the zero map when it vanishes.
    """
    _check_dim(G1, G2)
    if G1.is_zero() or G2.is_zero():
        return zero_map(G1.dim)
    k, l = G1.degree, G2.degree
    if k == 0 and l == 0:
        return zero_map(G1.dim)
    poly = _slot_composition(G2, G1)
    for key, v in _slot_composition(G1, G2).items():
        poly[key] -= v
    return _from_poly(k + l - 1, G1.dim, poly)


class PolySum:
    """Finite sum of PolyMaps on one dim, normalized to one term per degree."""

    __slots__ = ("dim", "terms", "_hash")

    def __init__(self, terms: Iterable, dim: int | None = None):
        terms = [t for t in _flatten(terms)]
        if dim is None:
            if not terms:
                raise ValueError("empty PolySum needs an explicit dim")
            dim = terms[0].dim
        by_degree = {}
        for t in terms:
            if t.dim != dim:
                raise ValueError(f"dimension mismatch: {t.dim} vs {dim}")
            if t.is_zero():
                continue
            prev = by_degree.get(t.degree)
            by_degree[t.degree] = t if prev is None else prev + t
        self.dim = dim
        self.terms = tuple(by_degree[k] for k in sorted(by_degree) if not by_degree[k].is_zero())
        self._hash = None

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)

    def __eq__(self, other):
        if isinstance(other, PolyMap):
            other = PolySum([other], dim=other.dim)
        if not isinstance(other, PolySum):
            return NotImplemented
        return self.dim == other.dim and self.terms == other.terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.dim, self.terms))
        return self._hash

    def __repr__(self):
        return f"PolySum(dim={self.dim}, degrees={self.degrees})"

    def __add__(self, other):
        return PolySum([self, other], dim=self.dim)

    def __neg__(self):
        return PolySum([-t for t in self.terms], dim=self.dim)

    def __sub__(self, other):
        return self + (-other)

    def __rmul__(self, a):
        if isinstance(a, Number):
            return PolySum([t.scale(a) for t in self.terms], dim=self.dim)
        return NotImplemented

    @property
    def degrees(self) -> tuple:
        return tuple(t.degree for t in self.terms)

    @property
    def max_degree(self) -> int:
        return max(self.degrees, default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return len(self.terms) == 1 and self.terms[0].degree == 0

    @property
    def is_exact(self) -> bool:
        return all(t.is_exact for t in self.terms)

    def term(self, degree: int) -> PolyMap:
        for t in self.terms:
            if t.degree == degree:
                return t
        return zero_map(self.dim)

    def to_float(self) -> "PolySum":
        return PolySum([t.to_float() for t in self.terms], dim=self.dim)

    def evaluate(self, u) -> np.ndarray:
        out = np.zeros(self.dim)
        for t in self.terms:
            out = out + evaluate(t, u)
        return out


def _flatten(terms):
    for t in terms:
        if isinstance(t, PolySum):
            yield from t.terms
        else:
            yield t


def bracket(X, Y) -> PolySum:
    """Bilinear extension of :func:`lie_bracket` to PolySums."""
    xs = X.terms if isinstance(X, PolySum) else (X,)
    ys = Y.terms if isinstance(Y, PolySum) else (Y,)
    _check_dim(X, Y)
    return PolySum([lie_bracket(a, b) for a in xs for b in ys], dim=X.dim)


# -- text serialization -------------------------------------------------------
def _fmt(c) -> str:
    if isinstance(c, float):
        return repr(c)
    c = Fraction(c)
    return f"'{c.numerator}'" if c.denominator == 1 else f"'{c.numerator}/{c.denominator}'"


def dumps(G: PolyMap) -> str:
    """``(degree, dim, [(i, [j1, ..., jk], coeff), ...])``.

    Exact coefficients are quoted rationals, floats use shortest round-trip
    repr.  Records are sorted so equal maps serialize identically.
    """
    recs = ", ".join(
        f"({i}, [{', '.join(map(str, J))}], {_fmt(c)})" for (i, J), c in sorted(G.coeffs.items())
    )
    return f"({G.degree}, {G.dim}, [{recs}])"


def loads(text: str) -> PolyMap:
    degree, dim, recs = ast.literal_eval(text.strip())
    coeffs = {}
    for i, J, c in recs:
        coeffs[(i, tuple(J))] = Fraction(c) if isinstance(c, str) else float(c)
    return PolyMap(degree, dim, coeffs)
