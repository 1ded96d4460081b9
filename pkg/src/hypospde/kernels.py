"""Vectorized float evaluation of PolySums: values, Jacobian products, Jacobians.

Inputs carry a leading batch axis: ``U`` has shape ``(B, n)``.  Direction
arguments may be ``(B, n)`` or ``(B, n, K)`` (several directions at once).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from .tensor import PolyMap, PolySum, multinomial


class _Term:
    def __init__(self, G: PolyMap):
        n = G.dim
        self.k = G.degree
        items = sorted(G.coeffs.items())
        self.out = np.array([i for (i, _), _ in items], dtype=np.intp)
        self.inp = np.array([J for (_, J), _ in items], dtype=np.intp).reshape(len(items), self.k)
        # polynomial weight: tensor entry times the number of slot orderings
        self.w = np.array([float(c) * multinomial(J) for (_, J), c in items])
        nnz = len(items)
        cols = np.arange(nnz)
        self.S_out = sps.csr_matrix((np.ones(nnz), (self.out, cols)), shape=(n, nnz))
        self.S_in = [sps.csr_matrix((np.ones(nnz), (self.inp[:, s], cols)), shape=(n, nnz))
                     for s in range(self.k)]

    def factors(self, U):
        return [U[:, self.inp[:, s]] for s in range(self.k)]

    def slot_coefficients(self, U):
        """``w * prod_{t != s} u_{j_t}`` for every slot ``s``, each ``(B, nnz)``."""
        f = self.factors(U)
        coefs = []
        for s in range(self.k):
            c = np.broadcast_to(self.w, (U.shape[0], self.w.size)).copy()
            for t in range(self.k):
                if t != s:
                    c *= f[t]
            coefs.append(c)
        return coefs


def _scatter(S, vals):
    """Sum ``vals`` (B, nnz[, K]) into rows of ``S`` (n, nnz): returns (B, n[, K])."""
    B = vals.shape[0]
    if vals.ndim == 2:
        return np.asarray((S @ vals.T).T)
    K = vals.shape[2]
    flat = vals.transpose(1, 0, 2).reshape(vals.shape[1], B * K)
    return np.asarray(S @ flat).reshape(S.shape[0], B, K).transpose(1, 0, 2)


class FieldKernel:
    """Compiled float view of a PolySum ``u -> sum_k G_k(u, ..., u)``."""

    def __init__(self, field):
        if isinstance(field, PolyMap):
            field = PolySum([field], dim=field.dim)
        self.dim = field.dim
        self.const = np.zeros(self.dim)
        self.terms = []
        for t in field.to_float().terms:
            if t.degree == 0:
                self.const += t.constant_vector()
            else:
                self.terms.append(_Term(t))

    def value(self, U):
        U = np.atleast_2d(U)
        out = np.broadcast_to(self.const, U.shape).copy()
        for t in self.terms:
            f = t.factors(U)
            vals = np.broadcast_to(t.w, (U.shape[0], t.w.size)).copy()
            for x in f:
                vals *= x
            out += _scatter(t.S_out, vals)
        return out

    def jvp(self, U, H):
        """``DF(u) h``; equals ``sum_k k G_k(u, ..., u, h)``."""
        U = np.atleast_2d(U)
        out = np.zeros(H.shape)
        for t in self.terms:
            for s, c in enumerate(t.slot_coefficients(U)):
                Hs = H[:, t.inp[:, s]]
                vals = c * Hs if H.ndim == 2 else c[:, :, None] * Hs
                out += _scatter(t.S_out, vals)
        return out

    def vjp(self, U, R):
        """``DF(u)^T r``."""
        U = np.atleast_2d(U)
        out = np.zeros(R.shape)
        for t in self.terms:
            Ro = R[:, t.out]
            for s, c in enumerate(t.slot_coefficients(U)):
                vals = c * Ro if R.ndim == 2 else c[:, :, None] * Ro
                out += _scatter(t.S_in[s], vals)
        return out

    def jacobian(self, U):
        """Dense ``DF(u)``, shape ``(B, n, n)``."""
        U = np.atleast_2d(U)
        n = self.dim
        out = np.zeros((U.shape[0], n, n))
        rows = np.arange(U.shape[0])[:, None]
        for t in self.terms:
            for s, c in enumerate(t.slot_coefficients(U)):
                flat = out.reshape(U.shape[0], n * n)
                np.add.at(flat, (rows, t.out * n + t.inp[:, s]), c)
        return out
