"""Pathwise simulation of the truncated SPDE, its shifted form, and its linearization.

Time stepping is exponential Euler on a uniform grid::

    u[j+1] = e^{-A dt} u[j] + phi1(-A dt) dt F(u[j]) + e^{-A dt} Q dW[j]

with ``phi1(z) = (e^z - 1) / z``.  The Jacobian and adjoint sweeps use the
exact derivative of this one-step map, so forward/adjoint duality holds to
roundoff on any grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .kernels import FieldKernel
from .problem import ProblemSpec
from .rng import generator

BLOWUP_FACTOR = 1e6


class BlowUpError(ArithmeticError):
    """The state left the configured bound (or became non-finite)."""

    def __init__(self, step: int, norm: float):
        super().__init__(f"state norm {norm:.3e} exceeded the blow-up bound at step {step}")
        self.step = step
        self.norm = norm


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """``d``-dimensional Wiener path on ``t_j = j T / M``; ``values`` is ``(d, M+1)``."""

    values: np.ndarray
    horizon: float
    seed: int | None = None

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def steps(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def subsample(self, factor: int) -> "BrownianPath":
        """The same path seen on every ``factor``-th node."""
        if self.steps % factor:
            raise ValueError(f"{self.steps} steps not divisible by {factor}")
        return BrownianPath(self.values[:, ::factor].copy(), self.horizon, self.seed)

    def negated(self) -> "BrownianPath":
        return BrownianPath(-self.values, self.horizon, self.seed)


def sample_path(M: int, d: int, T: float, seed: int) -> BrownianPath:
    """Exact Gaussian increments ``N(0, T/M)``; deterministic in ``seed``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if not T > 0:
        raise ValueError("T must be positive")
    dW = generator(seed).standard_normal((d, M)) * np.sqrt(T / M)
    values = np.zeros((d, M + 1))
    np.cumsum(dW, axis=1, out=values[:, 1:])
    return BrownianPath(values, float(T), seed)


def brownian_increments(seeds, M: int, d: int, T: float) -> np.ndarray:
    """Increments of ``sample_path`` for each seed, stacked as ``(S, M, d)``."""
    sq = np.sqrt(T / M)
    return np.stack([generator(s).standard_normal((d, M)).T * sq for s in seeds])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States on the path grid; ``states`` is ``(n, M+1)``.

    ``shifted`` trajectories hold ``v = u - QW`` rather than ``u``.
    """

    states: np.ndarray
    problem: ProblemSpec
    path: BrownianPath
    u0: np.ndarray
    shifted: bool = False

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    @property
    def steps(self) -> int:
        return self.states.shape[1] - 1

    def u_states(self) -> np.ndarray:
        """``u`` on the grid, ``(n, M+1)``, reconstructing ``v + QW`` if needed."""
        if not self.shifted:
            return self.states
        return self.states + self.problem.Q @ self.path.values

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"mode{k}" for k in range(self.states.shape[0])])
        for t, row in zip(self.times, self.states.T):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def path_to_csv(path: BrownianPath, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t"] + [f"W{i}" for i in range(path.d)])
    for t, row in zip(path.times, path.values.T):
        w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


@dataclass
class Stepper:
    """Float data for exponential Euler on one grid."""

    problem: ProblemSpec
    dt: float
    kernel: FieldKernel = field(init=False)

    def __post_init__(self):
        lam = self.problem.lambdas
        self.kernel = FieldKernel(self.problem.forcing())
        self.E = np.exp(-lam * self.dt)
        self.phi = -np.expm1(-lam * self.dt) / lam  # phi1(-lam dt) * dt, stable as lam dt -> 0
        self.lam = lam
        self.Q = self.problem.Q

    def step_matrix_T(self, U, R):
        """Apply the transposed one-step Jacobian ``(E + phi DF(u))^T`` to ``R``."""
        Rphi = self.phi * R if R.ndim == 2 else self.phi[None, :, None] * R
        if R.ndim == 2:
            return self.E * R + self.kernel.vjp(U, Rphi)
        return self.E[None, :, None] * R + self.kernel.vjp(U, Rphi)

    def step_matrix(self, U, H):
        """Apply ``E + phi DF(u)`` to ``H``."""
        JH = self.kernel.jvp(U, H)
        if H.ndim == 2:
            return self.E * H + self.phi * JH
        return self.E[None, :, None] * H + self.phi[None, :, None] * JH


def _bound(u0):
    return BLOWUP_FACTOR * (1.0 + np.linalg.norm(u0, axis=-1))


def _check(U, bound, step):
    norms = np.linalg.norm(U, axis=-1)
    bad = ~np.isfinite(norms) | (norms > bound)
    if bad.any():
        raise BlowUpError(step, float(np.max(np.where(np.isfinite(norms), norms, np.inf))))


def simulate_batch(problem: ProblemSpec, dW: np.ndarray, dt: float, u0) -> np.ndarray:
    """Integrate a batch of paths; ``dW`` is ``(S, M, d)``, returns ``(S, M+1, n)``."""
    st = Stepper(problem, dt)
    S, M, _ = dW.shape
    U = np.empty((S, M + 1, problem.dim))
    U[:, 0] = np.broadcast_to(np.asarray(u0, dtype=float), (S, problem.dim))
    bound = _bound(U[:, 0])
    noise = dW @ st.Q.T * st.E  # e^{-A dt} Q dW
    for j in range(M):
        u = U[:, j]
        U[:, j + 1] = st.E * u + st.phi * st.kernel.value(u) + noise[:, j]
        _check(U[:, j + 1], bound, j + 1)
    return U


def integrate(problem: ProblemSpec, path: BrownianPath, u0=None) -> Trajectory:
    """Exponential-Euler solution of ``du = (-Au + F(u)) dt + Q dW`` along ``path``."""
    _check_path(problem, path)
    u0 = np.zeros(problem.dim) if u0 is None else np.asarray(u0, dtype=float)
    if not np.all(np.isfinite(u0)):
        raise ValueError("u0 must be finite")
    U = simulate_batch(problem, path.increments.T[None], path.dt, u0)[0]
    return Trajectory(U.T.copy(), problem, path, u0)


def integrate_shifted(problem: ProblemSpec, path: BrownianPath, u0=None) -> Trajectory:
    """Solve the random ODE for ``v = u - QW``: ``v' = -Av + F(v + QW) - AQW``.

    Same exponential scheme, with ``W`` frozen at the left node of each step.
    """
    _check_path(problem, path)
    u0 = np.zeros(problem.dim) if u0 is None else np.asarray(u0, dtype=float)
    st = Stepper(problem, path.dt)
    QW = (st.Q @ path.values).T  # (M+1, n)
    M = path.steps
    V = np.empty((M + 1, problem.dim))
    V[0] = u0  # W(0) = 0
    bound = _bound(u0)
    for j in range(M):
        u = V[j] + QW[j]
        rhs = st.kernel.value(u[None])[0] - st.lam * QW[j]
        V[j + 1] = st.E * V[j] + st.phi * rhs
        _check(V[j + 1][None] + QW[j + 1], bound, j + 1)
    return Trajectory(V.T.copy(), problem, path, u0, shifted=True)


def _check_path(problem, path):
    if path.d != problem.d:
        raise ValueError(f"path has {path.d} components, problem has d = {problem.d}")


def jacobian_forward(problem: ProblemSpec, traj: Trajectory, s_index: int, h) -> np.ndarray:
    """``J_{s,T} h``: the variational equation propagated from node ``s_index`` to the end."""
    M = traj.steps
    if not 0 <= s_index <= M:
        raise IndexError(f"s_index {s_index} outside 0..{M}")
    st = Stepper(problem, traj.path.dt)
    U = traj.u_states().T
    H = np.asarray(h, dtype=float)[None].copy()
    for j in range(s_index, M):
        H = st.step_matrix(U[j][None], H)
    _check(H, np.inf, M)
    return H[0]


def adjoint_sweep(st: Stepper, U: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Backward sweep for a batch: ``U`` is ``(S, M+1, n)``, ``R`` the terminal ``(S, n[, K])``.

    Returns ``rho`` with shape ``(S, M+1, n[, K])``, ``rho[:, j] = J_{t_j,T}^T xi``.
    """
    M = U.shape[1] - 1
    out = np.empty((U.shape[0], M + 1) + R.shape[1:])
    out[:, M] = R
    for j in range(M - 1, -1, -1):
        R = st.step_matrix_T(U[:, j], R)
        out[:, j] = R
    return out


def adjoint_backward(problem: ProblemSpec, traj: Trajectory, xi) -> np.ndarray:
    """``rho(s_j) = J_{s_j,T}^* xi`` for every node, shape ``(M+1, n)``.

    ``xi`` may also be an ``(n, K)`` block of directions, giving ``(M+1, n, K)``.
    """
    st = Stepper(problem, traj.path.dt)
    U = traj.u_states().T[None]
    xi = np.asarray(xi, dtype=float)
    rho = adjoint_sweep(st, U, xi[None])[0]
    if not np.all(np.isfinite(rho)):
        raise BlowUpError(0, float("inf"))
    return rho


def jacobian_matrices(problem: ProblemSpec, traj: Trajectory) -> np.ndarray:
    """``J_{0,t_j}`` for every node, ``(M+1, n, n)``."""
    st = Stepper(problem, traj.path.dt)
    U = traj.u_states().T
    n = problem.dim
    out = np.empty((traj.steps + 1, n, n))
    J = np.eye(n)
    out[0] = J
    for j in range(traj.steps):
        J = st.E[:, None] * J + st.phi[:, None] * (st.kernel.jacobian(U[j][None])[0] @ J)
        out[j + 1] = J
    return out
