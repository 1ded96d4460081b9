"""Malliavin matrices of projected solutions, small-eigenvalue tails, densities.

With additive noise the Malliavin matrix satisfies::

    <xi, M_t xi> = sum_i int_0^t <xi, J_{s,t} q_i>^2 ds

and one adjoint sweep gives ``J_{s,t}^* xi`` for every ``s`` at once.
Integrals use the trapezoid rule on the integrator's own grid.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .problem import ProblemSpec
from .rng import path_seed
from .sim import (
    Stepper,
    Trajectory,
    adjoint_backward,
    adjoint_sweep,
    brownian_increments,
    integrate,
    jacobian_matrices,
    sample_path,
    simulate_batch,
)

log = logging.getLogger(__name__)

EIG_CLAMP = 1e-10
COND_LIMIT = 1e12
DEFAULT_STEPS = 1000


class DualityError(ArithmeticError):
    """An assembled Malliavin matrix has a clearly negative eigenvalue."""


class ConditioningError(ArithmeticError):
    """``J_{0,s}`` is too ill-conditioned to invert reliably."""


def trapezoid_weights(M: int, dt: float) -> np.ndarray:
    w = np.full(M + 1, dt)
    w[0] = w[-1] = dt / 2
    return w


def malliavin_quadratic_form(problem: ProblemSpec, traj: Trajectory, path, xi) -> float:
    """``<xi, M_t xi>`` with ``t`` the end of ``traj``."""
    rho = adjoint_backward(problem, traj, xi)
    g = rho @ problem.Q  # (M+1, d): <J_{s,t}^* xi, q_i>
    w = trapezoid_weights(traj.steps, path.dt)
    return float(w @ np.sum(g * g, axis=1))


def reduced_quadratic_form(problem: ProblemSpec, traj: Trajectory, path, xi) -> float:
    """``<xi, C_t xi> = sum_i int_0^t <xi, J_{0,s}^{-1} q_i>^2 ds``.

    Raises :class:`ConditioningError` when ``cond(J_{0,s})`` passes ``1e12``;
    long dissipative horizons make ``J_{0,s}`` nearly singular.
    """
    xi = np.asarray(xi, dtype=float)
    g = _reduced_integrand(problem, traj, xi[:, None])[:, 0, :]
    w = trapezoid_weights(traj.steps, path.dt)
    return float(w @ np.sum(g * g, axis=1))


def reduced_matrix(problem: ProblemSpec, traj: Trajectory, path) -> np.ndarray:
    """Full ``C_t`` (n x n)."""
    g = _reduced_integrand(problem, traj, np.eye(problem.dim))  # (M+1, n, d)
    w = trapezoid_weights(traj.steps, path.dt)
    return np.einsum("j,jad,jbd->ab", w, g, g)


def _reduced_integrand(problem, traj, xis):
    Js = jacobian_matrices(problem, traj)
    Q = problem.Q
    out = np.empty((len(Js), xis.shape[1], Q.shape[1]))
    for j, J in enumerate(Js):
        c = np.linalg.cond(J)
        if not c < COND_LIMIT:
            raise ConditioningError(f"cond(J_0,s) = {c:.3e} at node {j}")
        out[j] = xis.T @ np.linalg.solve(J, Q)
    return out


def full_malliavin_matrix(problem: ProblemSpec, traj: Trajectory, path, N: int | None = None) -> np.ndarray:
    """``Pi M_t Pi^*`` on the leading ``N`` modes (default all)."""
    N = problem.dim if N is None else N
    rho = adjoint_backward(problem, traj, np.eye(problem.dim)[:, :N])  # (M+1, n, N)
    g = np.einsum("jnr,nd->jrd", rho, problem.Q)
    w = trapezoid_weights(traj.steps, path.dt)
    return np.einsum("j,jad,jbd->ab", w, g, g)


@dataclass
class MalliavinSample:
    matrix: np.ndarray
    t: float
    seed: int
    min_eigenvalue: float
    clamped: int = 0  # eigenvalues in [-1e-10, 0) set to zero


def _min_eig(matrix):
    """Smallest eigenvalue with the clamp policy; returns ``(value, clamped_count)``."""
    ev = np.linalg.eigvalsh(matrix)
    if ev[0] < -EIG_CLAMP:
        raise DualityError(f"Malliavin matrix eigenvalue {ev[0]:.3e} < -{EIG_CLAMP}")
    neg = int(np.sum(ev < 0))
    return max(float(ev[0]), 0.0), neg


def assemble_projected_matrix(problem: ProblemSpec, path_seed: int, t: float, N: int,
                              steps: int = DEFAULT_STEPS, u0=None) -> MalliavinSample:
    """One trajectory to time ``t``, then ``N`` adjoint directions; returns ``Pi M_t Pi^*``."""
    if N > problem.dim:
        raise ValueError(f"N = {N} exceeds dim {problem.dim}")
    path = sample_path(steps, problem.d, t, path_seed)
    traj = integrate(problem, path, u0)
    m = full_malliavin_matrix(problem, traj, path, N)
    m = (m + m.T) / 2
    lo, neg = _min_eig(m)
    return MalliavinSample(m, t, path_seed, lo, neg)


def malliavin_batch(problem: ProblemSpec, seeds, t: float, N: int, steps: int = DEFAULT_STEPS,
                    u0=None) -> np.ndarray:
    """Projected Malliavin matrices for many path seeds at once, ``(S, N, N)``.

    Bitwise equal to calling :func:`assemble_projected_matrix` per seed up to
    floating-point reassociation in the batched kernels.
    """
    seeds = list(seeds)
    dt = t / steps
    dW = brownian_increments(seeds, steps, problem.d, t)
    u0 = np.zeros(problem.dim) if u0 is None else u0
    U = simulate_batch(problem, dW, dt, u0)
    st = Stepper(problem, dt)
    R = np.broadcast_to(np.eye(problem.dim)[:, :N], (len(seeds), problem.dim, N)).copy()
    rho = adjoint_sweep(st, U, R)  # (S, M+1, n, N)
    g = np.einsum("sjnr,nd->sjrd", rho, problem.Q)
    w = trapezoid_weights(steps, dt)
    m = np.einsum("j,sjad,sjbd->sab", w, g, g)
    return (m + m.transpose(0, 2, 1)) / 2


# -- small-eigenvalue tails ------------------------------------------------------
@dataclass
class TailFit:
    epsilons: np.ndarray  # decreasing
    frequencies: np.ndarray  # empirical P(lambda_min <= eps)
    fitted_p: float | None
    stderr: float | None
    sample_count: int
    samples: np.ndarray = field(repr=False, default=None)
    clamped: int = 0

    def lower_bound(self, z: float = 1.959963984540054) -> float | None:
        """One-sided confidence bound ``fitted_p - z * stderr``."""
        if self.fitted_p is None:
            return None
        return self.fitted_p - z * self.stderr

    def rows(self):
        n = self.sample_count
        for e, f in zip(self.epsilons, self.frequencies):
            yield e, n, int(round(f * n)), f, np.sqrt(f * (1 - f) / n)


def log_grid(lo: float, hi: float, per_decade: int = 12) -> np.ndarray:
    """Logarithmic grid from ``hi`` down to ``lo``."""
    count = int(round(np.log10(hi / lo) * per_decade)) + 1
    return np.logspace(np.log10(hi), np.log10(lo), count)


def fit_tail(samples, eps_grid) -> TailFit:
    """Empirical ``P(X <= eps)`` on a decreasing grid plus a log-log slope.

    The slope uses unweighted least squares on the points whose frequency is
    strictly inside (0, 1); at least three are needed.
    """
    samples = np.asarray(samples, dtype=float)
    eps = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    freq = np.array([np.mean(samples <= e) for e in eps])
    p, se = fit_slope(eps, freq)
    return TailFit(eps, freq, p, se, samples.size, samples)


def fit_slope(eps, freq):
    """Log-log least-squares slope over points with ``0 < freq < 1``; ``(None, None)`` if < 3."""
    eps, freq = np.asarray(eps, dtype=float), np.asarray(freq, dtype=float)
    inside = (freq > 0) & (freq < 1)
    if inside.sum() < 3:
        return None, None
    res = stats.linregress(np.log(eps[inside]), np.log(freq[inside]))
    return float(res.slope), float(res.stderr)


def _lambda_min_chunk(args):
    problem, seeds, t, N, steps, u0 = args
    mats = malliavin_batch(problem, seeds, t, N, steps, u0)
    ev = np.linalg.eigvalsh(mats)[:, 0]
    if ev.min() < -EIG_CLAMP:
        raise DualityError(f"Malliavin matrix eigenvalue {ev.min():.3e} < -{EIG_CLAMP}")
    return np.maximum(ev, 0.0), int(np.sum(ev < 0))


def lambda_min_samples(problem: ProblemSpec, t: float, N: int, sample_count: int, master_seed: int,
                       steps: int = 200, u0=None, chunk: int = 500, workers: int = 1):
    """``lambda_min(Pi M_t Pi^*)`` for paths ``0..sample_count-1`` of ``master_seed``."""
    seeds = [path_seed(master_seed, i) for i in range(sample_count)]
    jobs = [(problem, seeds[a:a + chunk], t, N, steps, u0) for a in range(0, sample_count, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_lambda_min_chunk, jobs))
    else:
        parts = [_lambda_min_chunk(j) for j in jobs]
    return np.concatenate([p[0] for p in parts]), sum(p[1] for p in parts)


def tail_fit(problem: ProblemSpec, t: float, N: int, sample_count: int, eps_grid, master_seed: int = 0,
             steps: int = 200, u0=None, workers: int = 1) -> TailFit:
    """Monte Carlo estimate of ``P(lambda_min(Pi M_t Pi^*) <= eps)`` and its log-log slope."""
    if sample_count < 100:
        raise ValueError("tail_fit needs sample_count >= 100")
    lam, clamped = lambda_min_samples(problem, t, N, sample_count, master_seed, steps, u0,
                                      workers=workers)
    fit = fit_tail(lam, eps_grid)
    fit.clamped = clamped
    return fit


# -- densities of projections ------------------------------------------------------
@dataclass
class KdeResult:
    values: np.ndarray
    bandwidth: np.ndarray
    degenerate: bool  # some coordinate has (numerically) no spread: not a density


def kde_density(samples, query_points, chunk: int = 256) -> KdeResult:
    """Gaussian product-kernel estimate with Silverman's per-axis bandwidth.

    ``h_i = sigma_i (4 / ((N + 2) S))^{1/(N+4)}``.  A coordinate with no
    spread gets a tiny floor bandwidth and the result is flagged degenerate.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    S, N = X.shape
    if N > 3:
        raise ValueError("kde_density tabulates at most 3 dimensions")
    if S < 50:
        raise ValueError("kde_density needs at least 50 samples")
    Y = np.asarray(query_points, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None] if N == 1 else Y[None]
    sigma = X.std(axis=0, ddof=1)
    scale = 1.0 + np.abs(X.mean(axis=0))
    degenerate = bool(np.any(sigma <= 1e-12 * scale))
    h = sigma * (4.0 / ((N + 2) * S)) ** (1.0 / (N + 4))
    h = np.where(sigma <= 1e-12 * scale, 1e-9 * scale, h)
    norm = 1.0 / (S * np.prod(h) * (2 * np.pi) ** (N / 2))
    out = np.empty(len(Y))
    for a in range(0, len(Y), chunk):
        z = (Y[a:a + chunk, None, :] - X[None]) / h
        out[a:a + chunk] = norm * np.exp(-0.5 * np.sum(z * z, axis=2)).sum(axis=1)
    return KdeResult(out, h, degenerate)
