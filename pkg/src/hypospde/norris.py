"""Wiener polynomials, the small-Wiener-polynomial dichotomy, and the bracket expansion.

A Wiener polynomial on ``[0, 1]`` is ``Z(t) = sum_alpha A_alpha(t) W_alpha(t)``
where ``W_alpha = W_{alpha_1} ... W_{alpha_l}`` and ``W_() = 1``.  Multiindices
are sorted tuples of 0-based noise indices.

The dichotomy: if ``|Z|_inf <= eps`` then either every coefficient is small,
``sup_alpha |A_alpha|_inf <= eps^(3^-m)``, or some coefficient is rough,
``sup_alpha Lip(A_alpha) >= eps^(-3^-(m+1))``.  A pair satisfying neither is a
violation; the violation frequency over paths is a measurable proxy for the
exceptional event, which has no constructive description.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations_with_replacement
from math import comb, factorial

import numpy as np
from scipy import stats

from .kernels import FieldKernel
from .malliavin import fit_slope
from .problem import ProblemSpec
from .rng import generator, path_seed
from .sim import BrownianPath, Stepper, Trajectory, adjoint_sweep, integrate_shifted, sample_path
from .tensor import PolySum, bracket, constant

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 10**5
LIP_RTOL = 1e-9

VACUOUS = "VACUOUS"
SMALL_COEFF = "SMALL_COEFF"
LARGE_LIP = "LARGE_LIP"
VIOLATION = "VIOLATION"
OUTCOMES = (VACUOUS, SMALL_COEFF, LARGE_LIP, VIOLATION)


class TermBudgetExceeded(RuntimeError):
    def __init__(self, count: int, budget: int):
        super().__init__(f"{count} multiindices requested (budget {budget})")
        self.count = count
        self.budget = budget


# -- multiindices and monomials ---------------------------------------------------
def multiindex_count(d: int, m: int) -> int:
    return sum(comb(d + l - 1, l) for l in range(m + 1))


def enumerate_multiindices(d: int, m: int, budget: int = DEFAULT_BUDGET) -> list:
    """All sorted multisets over ``0..d-1`` of size ``<= m``, in lexicographic order."""
    if d < 1 or m < 0:
        raise ValueError("need d >= 1 and m >= 0")
    count = multiindex_count(d, m)
    if count > budget:
        raise TermBudgetExceeded(count, budget)
    out = []
    for l in range(m + 1):
        out.extend(combinations_with_replacement(range(d), l))
    return sorted(out)


def multiindex_factorial(alpha) -> int:
    """``alpha! = prod_i (multiplicity of i)!``."""
    out = 1
    for i in set(alpha):
        out *= factorial(alpha.count(i))
    return out


def label(alpha) -> str:
    """Human label with 1-based indices, ``()`` for the empty multiindex."""
    return "(" + ",".join(str(i + 1) for i in alpha) + ")"


def wiener_monomial(path: BrownianPath, alpha, t_index=None):
    """``W_alpha`` at node ``t_index``, or on the whole grid when ``t_index`` is None."""
    vals = path.values if t_index is None else path.values[:, t_index]
    out = np.ones(vals.shape[1:]) if t_index is None else 1.0
    for i in alpha:
        out = out * vals[i]
    return out


# -- coefficient processes ----------------------------------------------------------
def discrete_lipschitz(values, horizon: float = 1.0) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    dt = horizon / (values.size - 1)
    return float(np.max(np.abs(np.diff(values))) / dt)


@dataclass(frozen=True, eq=False)
class CoeffProcess:
    """Grid values of a Lipschitz coefficient (not necessarily adapted)."""

    values: np.ndarray
    lipschitz_bound: float
    horizon: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if not np.all(np.isfinite(v)):
            raise ValueError("coefficient values must be finite")
        lip = self.lipschitz
        if lip > self.lipschitz_bound * (1 + LIP_RTOL):
            raise ValueError(f"measured Lipschitz constant {lip:.6g} exceeds declared {self.lipschitz_bound:.6g}")

    @property
    def lipschitz(self) -> float:
        return discrete_lipschitz(self.values, self.horizon)

    @property
    def sup_bound(self) -> float:
        return float(np.max(np.abs(self.values)))

    @classmethod
    def constant(cls, value: float, steps: int, horizon: float = 1.0) -> "CoeffProcess":
        return cls(np.full(steps + 1, float(value)), 0.0, horizon)


@dataclass(frozen=True, eq=False)
class WienerPolyProcess:
    d: int
    m: int
    coeffs: dict  # multiindex -> CoeffProcess; absent keys are identically zero

    def __post_init__(self):
        for alpha in self.coeffs:
            if len(alpha) > self.m or any(not 0 <= i < self.d for i in alpha) or tuple(sorted(alpha)) != alpha:
                raise ValueError(f"multiindex {alpha} is not a sorted multiset over 0..{self.d - 1} of size <= {self.m}")
        lens = {c.values.size for c in self.coeffs.values()}
        if len(lens) > 1:
            raise ValueError("coefficient grids differ")

    @property
    def steps(self) -> int | None:
        for c in self.coeffs.values():
            return c.values.size - 1
        return None

    def coefficient_sup(self) -> float:
        return max((c.sup_bound for c in self.coeffs.values()), default=0.0)

    def lipschitz_sup(self) -> float:
        return max((c.lipschitz for c in self.coeffs.values()), default=0.0)


def eval_Z(proc: WienerPolyProcess, path: BrownianPath) -> np.ndarray:
    """``Z`` on the path grid."""
    if path.d != proc.d:
        raise ValueError(f"path has d = {path.d}, process has d = {proc.d}")
    steps = proc.steps
    if steps is not None and steps != path.steps:
        raise ValueError(f"process grid has {steps} steps, path has {path.steps}")
    Z = np.zeros(path.steps + 1)
    for alpha, c in proc.coeffs.items():
        Z = Z + c.values * wiener_monomial(path, alpha)
    return Z


# -- the dichotomy ----------------------------------------------------------------
def thresholds(eps: float, m: int):
    """``(eps^(3^-m), eps^(-3^-(m+1)))``."""
    return eps ** (3.0 ** -m), eps ** (-(3.0 ** -(m + 1)))


def _check_eps(eps):
    if not 0 < eps <= 1:
        raise ValueError(f"eps = {eps} outside (0, 1]")


@dataclass(frozen=True)
class DichotomyOutcome:
    outcome: str
    z_sup: float
    coeff_sup: float
    lip_sup: float
    small_threshold: float
    lip_threshold: float


def classify(z_sup, coeff_sup, lip_sup, eps, m):
    """Vectorized outcome codes (indices into :data:`OUTCOMES`)."""
    small, rough = thresholds(eps, m)
    z_sup, coeff_sup, lip_sup = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (z_sup, coeff_sup, lip_sup)))
    out = np.full(z_sup.shape, 3)
    out[lip_sup >= rough] = 2
    out[coeff_sup <= small] = 1
    out[z_sup > eps] = 0
    return out


def dichotomy_check(proc: WienerPolyProcess, path: BrownianPath, eps: float) -> DichotomyOutcome:
    """Decide which side of the dichotomy ``(proc, path)`` falls on at level ``eps``."""
    _check_eps(eps)
    if abs(path.horizon - 1.0) > 1e-12:
        raise ValueError("the dichotomy is stated on [0, 1]; rescale the path first")
    z = float(np.max(np.abs(eval_Z(proc, path))))
    a = proc.coefficient_sup()
    lip = proc.lipschitz_sup()
    code = int(classify(z, a, lip, eps, proc.m))
    small, rough = thresholds(eps, proc.m)
    return DichotomyOutcome(OUTCOMES[code], z, a, lip, small, rough)


# -- process families -----------------------------------------------------------------
def _lipschitz_track(target, lip, dt, lo=-np.inf, hi=np.inf):
    """Follow ``target`` with steps of size at most ``lip * dt``.

    ``target`` is ``(P, M+1)``; the result has discrete Lipschitz constant
    ``<= lip`` per row.
    """
    out = np.empty_like(target)
    out[:, 0] = np.clip(target[:, 0], lo, hi)
    step = (lip * dt)[:, None] if np.ndim(lip) else lip * dt
    step = np.broadcast_to(step, (target.shape[0], 1))[:, 0]
    for j in range(1, target.shape[1]):
        out[:, j] = out[:, j - 1] + np.clip(target[:, j] - out[:, j - 1], -step, step)
    return out


def _moving_average(W, width):
    """Causal-centered running mean with window ``2 width + 1`` nodes, shape preserved."""
    if width <= 0:
        return W.copy()
    pad = np.pad(W, (width, width), mode="edge")
    c = np.cumsum(np.concatenate([[0.0], pad]))
    return (c[2 * width + 1:] - c[:-2 * width - 1]) / (2 * width + 1)


@dataclass(frozen=True)
class ProcessFamily:
    """A reproducible generator of Wiener-polynomial processes along a path.

    ``kind`` is one of ``constant``, ``tracker``, ``resonant``.  ``params``
    are plain numbers so a family round-trips through a config file.
    """

    kind: str
    d: int
    m: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown family {self.kind!r}; known: {', '.join(FAMILIES)}")
        if self.d < 1 or self.m < 0:
            raise ValueError("need d >= 1 and m >= 0")

    def stacked(self, path: BrownianPath, rng: np.random.Generator, count: int):
        """``(alphas, values (P, K, M+1), lips (P,))`` for ``count`` processes."""
        return FAMILIES[self.kind](self, path, rng, count)

    def sample(self, path: BrownianPath, rng: np.random.Generator, count: int) -> list:
        alphas, vals, lips = self.stacked(path, rng, count)
        out = []
        for p in range(count):
            coeffs = {a: CoeffProcess(vals[p, k], float(lips[p]), path.horizon)
                      for k, a in enumerate(alphas) if np.any(vals[p, k])}
            out.append(WienerPolyProcess(self.d, self.m, coeffs))
        return out


def _constant_family(fam, path, rng, count):
    """Time-constant coefficients, uniform on ``[-scale, scale]``."""
    alphas = enumerate_multiindices(fam.d, fam.m)
    scale = float(fam.params.get("scale", 1.0))
    c = rng.uniform(-scale, scale, (count, len(alphas)))
    # occasionally shrink everything so small-Z cases are exercised
    c *= 10.0 ** rng.uniform(float(fam.params.get("log_shrink", -4.0)), 0.0, (count, 1))
    vals = np.repeat(c[:, :, None], path.steps + 1, axis=2)
    return alphas, vals, np.zeros(count)


def _tracker_family(fam, path, rng, count):
    """Clipped-ratio trackers: ``A_i`` chases ``-A_() / W_i`` under a Lipschitz budget.

    ``A_()`` ramps up from zero with slope ``lip`` to a level ``c``; every
    first-order coefficient follows the clipped ratio with the same budget,
    so ``Z`` stays small wherever the tracking succeeds.
    """
    alphas = enumerate_multiindices(fam.d, fam.m)
    M = path.steps
    dt = path.dt
    t = path.times
    lo, hi = float(fam.params.get("log_lip_min", -1.0)), float(fam.params.get("log_lip_max", 1.0))
    lips = 10.0 ** rng.uniform(lo, hi, count)
    level = rng.uniform(0.2, 1.0, count) * rng.choice([-1.0, 1.0], count)
    clip = float(fam.params.get("clip", 10.0))
    vals = np.zeros((count, len(alphas), M + 1))
    a0 = np.sign(level)[:, None] * np.minimum(np.abs(level)[:, None], lips[:, None] * t[None])
    vals[:, alphas.index(())] = a0
    # spread the work over the first-order letters, weights summing to one
    w = rng.dirichlet(np.ones(fam.d), count) if fam.d > 1 else np.ones((count, 1))
    for i in range(fam.d):
        if fam.m < 1:
            break
        W = path.values[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(np.abs(W) > 0, -w[:, i:i + 1] * a0 / W[None], 0.0)
        ratio = np.clip(ratio, -clip, clip)
        vals[:, alphas.index((i,))] = _lipschitz_track(ratio, lips, dt, -clip, clip)
    return alphas, vals, lips


def _resonant_family(fam, path, rng, count):
    """``Z = a prod (W_i - S_i)`` expanded in Wiener monomials.

    ``S_i`` is a running mean of ``W_i``, so ``Z`` is small while the
    coefficients (products of ``-S_i``) stay Lipschitz with a constant set by
    the smoothing window.  Uses the top order ``m``; letters are drawn at random.
    """
    alphas = enumerate_multiindices(fam.d, fam.m)
    index = {a: k for k, a in enumerate(alphas)}
    M = path.steps
    vals = np.zeros((count, len(alphas), M + 1))
    lips = np.zeros(count)
    lo, hi = float(fam.params.get("log_width_min", -2.0)), float(fam.params.get("log_width_max", -0.5))
    amp_lo, amp_hi = float(fam.params.get("log_amp_min", -1.0)), float(fam.params.get("log_amp_max", 1.0))
    for p in range(count):
        order = max(fam.m, 1)
        letters = tuple(sorted(rng.integers(0, fam.d, order)))
        width = max(1, int(round(10.0 ** rng.uniform(lo, hi) * M)))
        amp = 10.0 ** rng.uniform(amp_lo, amp_hi)
        S = [_moving_average(path.values[i], width) for i in letters]
        # expand prod_k (W_{l_k} - S_k): choose W from a subset, -S from the rest
        poly = {}
        for mask in range(1 << order):
            keep = tuple(sorted(letters[k] for k in range(order) if mask >> k & 1))
            coef = np.full(M + 1, amp)
            for k in range(order):
                if not mask >> k & 1:
                    coef = coef * -S[k]
            poly[keep] = poly.get(keep, 0.0) + coef
        if fam.m == 0:
            poly = {(): poly[()]}
        for a, v in poly.items():
            if a in index:
                vals[p, index[a]] = v
        lips[p] = max(discrete_lipschitz(v, path.horizon) for v in vals[p]) * (1 + 1e-12)
    return alphas, vals, lips


FAMILIES = {"constant": _constant_family, "tracker": _tracker_family, "resonant": _resonant_family}


def random_process(rng: np.random.Generator, path: BrownianPath, d: int, m: int, lip_max: float = 10.0):
    """Generic random process: each coefficient is a Lipschitz-tracked random walk."""
    alphas = enumerate_multiindices(d, m)
    M = path.steps
    lip = float(rng.uniform(0, lip_max))
    coeffs = {}
    for a in alphas:
        if rng.random() < 0.3:
            continue
        target = rng.normal(0, 10.0 ** rng.uniform(-3, 0), (1, M + 1)).cumsum(axis=1) * np.sqrt(path.dt)
        coeffs[a] = CoeffProcess(_lipschitz_track(target, np.array([lip]), path.dt)[0], lip, path.horizon)
    return WienerPolyProcess(d, m, coeffs)


# -- violation curves -------------------------------------------------------------------
@dataclass
class ViolationCurve:
    """Per-``eps`` frequency of charged paths (a path is charged if any process violates)."""

    family: ProcessFamily
    epsilons: np.ndarray  # decreasing
    path_count: int
    processes_per_path: int
    path_violations: np.ndarray
    pair_violations: np.ndarray
    fitted_p: float | None
    stderr: float | None
    master_seed: int
    steps: int

    @property
    def frequencies(self) -> np.ndarray:
        return self.path_violations / self.path_count

    @property
    def pair_frequencies(self) -> np.ndarray:
        return self.pair_violations / (self.path_count * self.processes_per_path)

    @property
    def stderrs(self) -> np.ndarray:
        f = self.frequencies
        return np.sqrt(f * (1 - f) / self.path_count)

    def is_monotone(self, k: float = 2.0) -> bool:
        """Frequencies never rise as ``eps`` decreases, beyond ``k`` standard errors."""
        f, se = self.frequencies, self.stderrs
        for a in range(len(f)):
            for b in range(a + 1, len(f)):
                if f[b] - f[a] > k * np.hypot(se[a], se[b]):
                    return False
        return True

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "trials", "violations", "frequency", "stderr", "pair_trials", "pair_violations"])
        for e, v, f, s, pv in zip(self.epsilons, self.path_violations, self.frequencies, self.stderrs,
                                  self.pair_violations):
            w.writerow([repr(float(e)), self.path_count, int(v), repr(float(f)), repr(float(s)),
                        self.path_count * self.processes_per_path, int(pv)])


def _path_chunk(args):
    family, master_seed, indices, steps, eps, per_path = args
    path_hits = np.zeros(len(eps), dtype=np.int64)
    pair_hits = np.zeros(len(eps), dtype=np.int64)
    for i in indices:
        path = sample_path(steps, family.d, 1.0, path_seed(master_seed, 2 * i))
        rng = generator(path_seed(master_seed, 2 * i + 1))
        alphas, vals, _ = family.stacked(path, rng, per_path)
        mono = np.stack([wiener_monomial(path, a) for a in alphas])
        Z = np.einsum("pkj,kj->pj", vals, mono)
        z_sup = np.max(np.abs(Z), axis=1)
        a_sup = np.max(np.abs(vals), axis=(1, 2))
        lip = np.max(np.abs(np.diff(vals, axis=2)), axis=(1, 2)) / path.dt
        for e_idx, e in enumerate(eps):
            v = classify(z_sup, a_sup, lip, e, family.m) == 3
            pair_hits[e_idx] += int(v.sum())
            path_hits[e_idx] += int(v.any())
    return path_hits, pair_hits


def exceptional_probability(family: ProcessFamily, eps_grid, path_count: int, processes_per_path: int,
                            master_seed: int, steps: int = 200, workers: int = 1,
                            chunk: int = 50) -> ViolationCurve:
    """Monte Carlo violation frequencies of ``family`` over an ``eps`` grid.

    Path ``i`` uses stream ``2 i`` of ``master_seed`` and its processes use
    stream ``2 i + 1``, so results do not depend on ``workers`` or ``chunk``.
    """
    eps = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    for e in eps:
        _check_eps(e)
    jobs = [(family, master_seed, range(a, min(a + chunk, path_count)), steps, eps, processes_per_path)
            for a in range(0, path_count, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_path_chunk, jobs))
    else:
        parts = [_path_chunk(j) for j in jobs]
    path_hits = sum(p[0] for p in parts)
    pair_hits = sum(p[1] for p in parts)
    p, se = fit_slope(eps, path_hits / path_count)
    return ViolationCurve(family, eps, path_count, processes_per_path, path_hits, pair_hits, p, se,
                          master_seed, steps)


# -- bracket expansion of <xi, J_{s,t} G(v(s))> ----------------------------------------
def _as_sum(G, dim):
    if isinstance(G, PolySum):
        return G
    return PolySum([G], dim=dim)


def expansion_terms(problem: ProblemSpec, G, budget: int = DEFAULT_BUDGET) -> dict:
    """Nonzero maps ``G_alpha`` with ``d/ds <xi, J_{s,t} G(v)> = sum <xi, J_{s,t} G_alpha(v)> W_alpha(s)``.

    ``G_alpha = [K_alpha, G] / alpha!`` where ``K_() = D`` is the drift and
    ``K_{alpha + i} = -[K_alpha, q_i]``, so every term is an iterated bracket
    of ``G`` with the drift and the noise directions.  Orders stop at the
    drift's degree, beyond which ``K_alpha`` vanishes.
    """
    drift = problem.drift()
    G = _as_sum(G, problem.dim)
    if not problem.is_exact or not G.is_exact:
        drift = drift.to_float()
        G = G.to_float()
    q = [PolySum([constant(col)], dim=problem.dim) for col in problem.noise]
    if not problem.is_exact:
        q = [c.to_float() for c in q]
    alphas = enumerate_multiindices(problem.d, drift.max_degree, budget)
    K = {(): drift}
    out = {}
    for a in alphas:
        if a not in K:
            prev = K[a[:-1]]
            K[a] = -1 * bracket(prev, q[a[-1]]) if not prev.is_zero() else prev
        if K[a].is_zero():
            continue
        Ga = bracket(K[a], G)
        f = multiindex_factorial(a)
        if f != 1:
            Ga = (1 / f if not Ga.is_exact else Fraction(1, f)) * Ga
        if not Ga.is_zero():
            out[a] = Ga
    return out


@dataclass
class ExpansionReport:
    residual: np.ndarray  # (M,), at the left nodes s_0..s_{M-1}
    lhs: np.ndarray
    rhs: np.ndarray
    terms: dict
    dt: float

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.residual)))

    @property
    def relative_sup(self) -> float:
        return self.sup / max(float(np.max(np.abs(self.lhs))), 1e-300)


def bracket_expansion_check(problem: ProblemSpec, traj: Trajectory, path: BrownianPath, G, xi,
                            terms: dict | None = None) -> ExpansionReport:
    """Residual of the bracket expansion along one discrete trajectory.

    The left side is the forward difference of ``f_j = <rho_j, G(v_j)>``
    with ``rho_j = J_{s_j,t}^* xi`` from the adjoint sweep; the right side
    evaluates ``sum_alpha <rho_{j+1}, G_alpha(v_j)> W_alpha(s_j)``.  Both
    use the same left-node freezing as the integrator, so the residual is
    first order in the step.
    """
    G = _as_sum(G, problem.dim)
    if terms is None:
        terms = expansion_terms(problem, G)
    Q = problem.Q
    QW = (Q @ path.values).T
    states = traj.states.T
    V = states if traj.shifted else states - QW
    U = V + QW
    st = Stepper(problem, path.dt)
    xi = np.asarray(xi, dtype=float)
    rho = adjoint_sweep(st, U[None], xi[None])[0]
    f = np.sum(rho * FieldKernel(G).value(V), axis=1)
    lhs = np.diff(f) / path.dt
    rhs = np.zeros(path.steps)
    for a, Ga in terms.items():
        mono = wiener_monomial(path, a)[:-1]
        rhs += np.sum(rho[1:] * FieldKernel(Ga).value(V[:-1]), axis=1) * mono
    return ExpansionReport(lhs - rhs, lhs, rhs, terms, path.dt)


@dataclass
class ExpansionConvergence:
    dts: np.ndarray
    sups: np.ndarray  # (len(seeds), len(dts)) sup residuals
    order: float  # fitted on the seed-mean of the sups
    order_stderr: float
    seeds: list

    @property
    def mean_sups(self) -> np.ndarray:
        return self.sups.mean(axis=0)


def expansion_convergence(problem: ProblemSpec, G, xi, seeds, dts=(1e-2, 5e-3, 2.5e-3),
                          horizon: float = 1.0, u0=None) -> ExpansionConvergence:
    """Sup residual on nested grids of the same Wiener paths, with its fitted order in ``dt``.

    Each seed gives one path on the finest grid; coarser grids subsample it.
    The order is the log-log slope of the mean sup residual over seeds.
    """
    seeds = [seeds] if np.isscalar(seeds) else list(seeds)
    dts = np.sort(np.asarray(dts, dtype=float))[::-1]
    finest = int(round(horizon / dts[-1]))
    factors = []
    for dt in dts:
        factor = finest * dt / horizon
        if abs(factor - round(factor)) > 1e-9:
            raise ValueError(f"dt {dt} does not nest in the finest grid")
        factors.append(int(round(factor)))
    terms = expansion_terms(problem, G)
    sups = np.empty((len(seeds), len(dts)))
    for a, seed in enumerate(seeds):
        fine = sample_path(finest, problem.d, horizon, seed)
        for b, factor in enumerate(factors):
            path = fine.subsample(factor)
            traj = integrate_shifted(problem, path, u0)
            sups[a, b] = bracket_expansion_check(problem, traj, path, G, xi, terms).sup
    res = stats.linregress(np.log(dts), np.log(sups.mean(axis=0)))
    return ExpansionConvergence(dts, sups, float(res.slope), float(res.stderr), seeds)
