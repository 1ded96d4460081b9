"""Galerkin-truncated SPDE instance ``du = (-Au + L u + F(u)) dt + Q dW``.

Modes are the eigenbasis of ``A``, so ``A`` is the diagonal of positive,
non-decreasing eigenvalues.  ``L`` is an optional degree-1 correction kept
apart from ``F`` so that every term of ``F`` has degree >= 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .tensor import PolyMap, PolySum, constant, diagonal


class ProblemError(ValueError):
    """Malformed problem data."""


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    eigenvalues: tuple
    nonlinearity: PolySum
    noise: tuple  # noise columns q_1..q_d, each a length-n tuple
    horizon: float = 1.0
    linear: PolyMap | None = None
    name: str = ""
    mode_labels: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", tuple(self.eigenvalues))
        object.__setattr__(self, "noise", tuple(tuple(q) for q in self.noise))
        n = len(self.eigenvalues)
        if n < 1:
            raise ProblemError("need at least one mode")
        if any(lam <= 0 for lam in self.eigenvalues):
            raise ProblemError("eigenvalues of A must be positive")
        if any(b < a for a, b in zip(self.eigenvalues, self.eigenvalues[1:])):
            raise ProblemError("eigenvalues of A must be non-decreasing")
        if not self.noise:
            raise ProblemError("need at least one noise column (d >= 1)")
        for q in self.noise:
            if len(q) != n:
                raise ProblemError(f"noise column of length {len(q)}, expected {n}")
        if self.nonlinearity.dim != n:
            raise ProblemError(f"nonlinearity has dim {self.nonlinearity.dim}, expected {n}")
        if any(deg < 2 for deg in self.nonlinearity.degrees):
            raise ProblemError("nonlinearity terms must have degree >= 2; use `linear` for degree 1")
        if self.linear is not None:
            if self.linear.dim != n:
                raise ProblemError("linear term has wrong dim")
            if not self.linear.is_zero() and self.linear.degree != 1:
                raise ProblemError("linear term must have degree 1")
        if not self.horizon > 0:
            raise ProblemError("horizon must be positive")

    def __eq__(self, other):
        # same equation; name and mode labels are presentation only
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        return (self.eigenvalues == other.eigenvalues and self.noise == other.noise
                and self.horizon == other.horizon and self.nonlinearity == other.nonlinearity
                and self.linear == other.linear)

    def __hash__(self):
        return hash((self.eigenvalues, self.noise, self.horizon))

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    @property
    def d(self) -> int:
        return len(self.noise)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([float(x) for x in self.eigenvalues])

    @property
    def Q(self) -> np.ndarray:
        """Float noise matrix, shape ``(n, d)``."""
        return np.array([[float(x) for x in q] for q in self.noise]).T

    @property
    def is_exact(self) -> bool:
        vals = list(self.eigenvalues) + [x for q in self.noise for x in q]
        exact = all(isinstance(x, (int, Fraction)) for x in vals)
        exact = exact and self.nonlinearity.is_exact
        return exact and (self.linear is None or self.linear.is_exact)

    def drift(self) -> PolySum:
        """``-A + L + F`` as a PolySum (exact when the data are exact)."""
        terms = [diagonal([-lam for lam in self.eigenvalues])]
        if self.linear is not None:
            terms.append(self.linear)
        terms.extend(self.nonlinearity.terms)
        return PolySum(terms, dim=self.dim)

    def forcing(self) -> PolySum:
        """Explicitly-treated part ``L + F`` of the drift."""
        terms = list(self.nonlinearity.terms)
        if self.linear is not None:
            terms.append(self.linear)
        return PolySum(terms, dim=self.dim)

    def noise_maps(self) -> list:
        return [constant(q) for q in self.noise]

    def with_(self, **changes) -> "ProblemSpec":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(changes)
        return ProblemSpec(**data)
