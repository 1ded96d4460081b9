"""Iterated Lie brackets of the drift with the noise directions, and span checks.

Words are left-nested: ``(i, D, j)`` stands for ``[[q_i, D], q_j]`` where
``D = -A + L + F`` is the drift.  Every word starts with a noise letter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .tensor import PolySum, bracket, constant

log = logging.getLogger(__name__)

DRIFT = "D"
RANK_RTOL = 1e-9
DEFAULT_BUDGET = 10**6


class BudgetExceeded(RuntimeError):
    """Bracket generation would exceed the combinatorial budget."""

    def __init__(self, count: int, budget: int):
        super().__init__(f"bracket generation would visit {count} words (budget {budget})")
        self.count = count
        self.budget = budget


@dataclass(frozen=True)
class BracketWord:
    letters: tuple

    def __post_init__(self):
        if not self.letters:
            raise ValueError("a bracket word has depth >= 1")
        if self.letters[0] == DRIFT:
            raise ValueError("bracket words are seeded by a noise letter")

    @property
    def depth(self) -> int:
        return len(self.letters)

    def __str__(self):
        return " ".join("D" if a == DRIFT else f"q{a + 1}" for a in self.letters)

    def extend(self, letter) -> "BracketWord":
        return BracketWord(self.letters + (letter,))

    @classmethod
    def parse(cls, text: str) -> "BracketWord":
        letters = []
        for tok in text.split():
            letters.append(DRIFT if tok == "D" else int(tok[1:]) - 1)
        return cls(tuple(letters))


@dataclass
class BracketElement:
    word: BracketWord
    map: PolySum
    aliases: list = field(default_factory=list)  # other words giving the same map

    @property
    def is_constant(self) -> bool:
        return self.map.is_constant()


@dataclass
class BracketSet:
    elements: list
    depth_limit: int
    counts_per_depth: dict
    dedup_count: int
    zero_count: int
    unextended_count: int

    @property
    def constants(self) -> list:
        return [e for e in self.elements if e.is_constant]

    def constant_vectors(self, exact: bool = False) -> list:
        if exact:
            return [e.map.terms[0].constant_entries() for e in self.constants]
        return [e.map.terms[0].constant_vector() for e in self.constants]


def word_count(d: int, depth_limit: int) -> int:
    """Number of left-nested words of depth <= depth_limit over {D, q_1..q_d}."""
    return sum(d * (d + 1) ** (m - 1) for m in range(1, depth_limit + 1))


def evaluate_word(word: BracketWord, drift: PolySum, noise) -> PolySum:
    """Recompute the bracket named by ``word`` from scratch."""
    X = PolySum([constant(noise[word.letters[0]])])
    for a in word.letters[1:]:
        Y = drift if a == DRIFT else constant(noise[a])
        X = bracket(X, Y)
    return X


def generate_brackets(drift: PolySum, noise, depth_limit: int, budget: int = DEFAULT_BUDGET) -> BracketSet:
    """Breadth-first generation of left-nested brackets up to ``depth_limit``.

    Zero brackets are dropped; equal maps are stored once with all words kept
    as aliases.  An element whose top degree exceeds the number of letters
    still available is stored but not extended: no further bracket of it can
    be constant unless its top-degree part cancels.
    """
    if depth_limit < 1:
        raise ValueError("depth_limit must be >= 1")
    noise = [tuple(q) for q in noise]
    dim = drift.dim
    if any(len(q) != dim for q in noise):
        raise ValueError("noise vectors and drift disagree on dim")
    d = len(noise)
    total = word_count(d, depth_limit)
    if total > budget:
        raise BudgetExceeded(total, budget)

    letters = [DRIFT] + list(range(d))
    letter_maps = {DRIFT: drift}
    for i, q in enumerate(noise):
        letter_maps[i] = PolySum([constant(q)], dim=dim)

    seen = {}
    elements = []
    counts = {}
    dedup = zeros = unextended = 0

    frontier = []
    for i in range(d):
        X = letter_maps[i]
        w = BracketWord((i,))
        if X.is_zero():
            zeros += 1
            continue
        if X in seen:
            seen[X].aliases.append(w)
            dedup += 1
            continue
        el = BracketElement(w, X)
        seen[X] = el
        elements.append(el)
        frontier.append(el)
    counts[1] = len(frontier)

    for depth in range(2, depth_limit + 1):
        remaining = depth_limit - depth + 1
        new = []
        for el in frontier:
            if el.map.max_degree > remaining:
                unextended += 1
                continue
            for a in letters:
                if el.map.is_constant() and a != DRIFT:
                    zeros += 1  # bracket of two constants
                    continue
                Y = bracket(el.map, letter_maps[a])
                w = el.word.extend(a)
                if Y.is_zero():
                    zeros += 1
                    continue
                prev = seen.get(Y)
                if prev is not None:
                    prev.aliases.append(w)
                    dedup += 1
                    continue
                nel = BracketElement(w, Y)
                seen[Y] = nel
                elements.append(nel)
                new.append(nel)
        counts[depth] = len(new)
        log.debug("depth %d: %d new elements", depth, len(new))
        frontier = new

    return BracketSet(elements, depth_limit, counts, dedup, zeros, unextended)


# -- span analysis --------------------------------------------------------------
@dataclass
class SpanReport:
    rank: int
    target_dim: int
    smallest_singular_value: float
    verdict: str  # "SPANS" or "DEFICIENT"
    certificate: np.ndarray | None  # unit vector annihilating the family
    exact: bool
    certificate_exact: list | None = None
    basis_indices: list = field(default_factory=list)  # rows entering the echelon basis

    @property
    def spans(self) -> bool:
        return self.verdict == "SPANS"


def _normalized_rows(vectors, target_dim):
    V = np.array([np.asarray(v, dtype=float)[:target_dim] for v in vectors]).reshape(-1, target_dim)
    norms = np.linalg.norm(V, axis=1)
    keep = norms > 0
    V[keep] /= norms[keep, None]
    return V


def _smallest_sv(V, target_dim) -> float:
    if V.shape[0] < target_dim:
        return 0.0
    return float(np.linalg.svd(V, compute_uv=False)[-1])


def exact_echelon(vectors, ncols: int):
    """Incremental fraction-exact row reduction.

    Returns ``(basis, pivots, used)`` where ``basis`` rows are reduced,
    ``pivots`` their pivot columns and ``used`` the input indices that
    contributed a new pivot.
    """
    basis, pivots, used = [], [], []
    for idx, v in enumerate(vectors):
        row = [Fraction(x) for x in v[:ncols]]
        for b, p in zip(basis, pivots):
            if row[p] != 0:
                f = row[p]
                row = [x - f * y for x, y in zip(row, b)]
        p = next((c for c, x in enumerate(row) if x != 0), None)
        if p is None:
            continue
        inv = 1 / row[p]
        row = [x * inv for x in row]
        # keep the basis fully reduced so later pivots stay independent
        for k, b in enumerate(basis):
            if b[p] != 0:
                f = b[p]
                basis[k] = [x - f * y for x, y in zip(b, row)]
        basis.append(row)
        pivots.append(p)
        used.append(idx)
        if len(basis) == ncols:
            break
    return basis, pivots, used


def exact_null_vector(basis, pivots, ncols):
    """A rational vector orthogonal to every row of a reduced basis, or None."""
    free = [c for c in range(ncols) if c not in pivots]
    if not free:
        return None
    f = free[0]
    xi = [Fraction(0)] * ncols
    xi[f] = Fraction(1)
    for b, p in zip(basis, pivots):
        xi[p] = -b[f]
    return xi


def span_report(vectors, target_dim: int, exact: bool = False) -> SpanReport:
    """Rank of the family projected onto the leading ``target_dim`` modes.

    Float path: rank counts singular values above ``1e-9 * s_max`` of the
    row-normalized matrix.  Exact path: fraction Gaussian elimination, and
    the certificate is exactly orthogonal to every input.
    """
    vectors = list(vectors)
    if vectors and any(len(v) < target_dim for v in vectors):
        raise ValueError("vectors shorter than target_dim")
    if not vectors:
        cert = np.zeros(target_dim)
        cert[0] = 1.0
        return SpanReport(0, target_dim, 0.0, "DEFICIENT", cert, exact,
                          [Fraction(int(i == 0)) for i in range(target_dim)])

    V = _normalized_rows(vectors, target_dim)
    smin = _smallest_sv(V, target_dim)

    if exact:
        basis, pivots, used = exact_echelon(vectors, target_dim)
        rank = len(basis)
        if rank == target_dim:
            return SpanReport(rank, target_dim, smin, "SPANS", None, True, None, used)
        xi = exact_null_vector(basis, pivots, target_dim)
        cert = np.array([float(x) for x in xi])
        cert /= np.linalg.norm(cert)
        return SpanReport(rank, target_dim, smin, "DEFICIENT", cert, True, xi, used)

    s = np.linalg.svd(V, compute_uv=False)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    used = _greedy_basis(V, rank)
    if rank == target_dim:
        return SpanReport(rank, target_dim, smin, "SPANS", None, False, None, used)
    _, _, vt = np.linalg.svd(V, full_matrices=True)
    cert = vt[-1]
    return SpanReport(rank, target_dim, smin, "DEFICIENT", cert / np.linalg.norm(cert), False, None, used)


def _greedy_basis(V, rank):
    used, cur = [], np.zeros((0, V.shape[1]))
    for idx, row in enumerate(V):
        if len(used) == rank:
            break
        trial = np.vstack([cur, row])
        s = np.linalg.svd(trial, compute_uv=False)
        if s[-1] > RANK_RTOL * s[0]:
            cur = trial
            used.append(idx)
    return used


@dataclass
class Verdict:
    verdict: str
    report: SpanReport
    witness_words: list  # words whose constants form a spanning (or maximal) basis
    min_depth: int | None  # smallest depth at which the rank reaches target_dim
    rank_by_depth: dict
    brackets: BracketSet

    @property
    def spans(self) -> bool:
        return self.verdict == "SPANS"


def hormander_verdict(problem, depth_limit: int, target_dim: int | None = None,
                      exact: bool | None = None, budget: int = DEFAULT_BUDGET) -> Verdict:
    """Generate brackets of ``problem`` and decide whether the constants span the leading modes."""
    if target_dim is None:
        target_dim = problem.dim
    if exact is None:
        exact = problem.is_exact
    drift = problem.drift()
    noise = problem.noise
    if not exact:
        drift = drift.to_float()
        noise = [tuple(float(x) for x in q) for q in noise]
    bset = generate_brackets(drift, noise, depth_limit, budget=budget)
    consts = bset.constants
    vectors = bset.constant_vectors(exact=exact)
    report = span_report(vectors, target_dim, exact=exact)
    witness = [str(consts[i].word) for i in report.basis_indices]

    rank_by_depth = {}
    for m in range(1, depth_limit + 1):
        sub = [v for e, v in zip(consts, vectors) if e.word.depth <= m]
        if exact:
            rank_by_depth[m] = len(exact_echelon(sub, target_dim)[0]) if sub else 0
        else:
            rank_by_depth[m] = span_report(sub, target_dim).rank if sub else 0
    min_depth = next((m for m, r in rank_by_depth.items() if r == target_dim), None)
    return Verdict(report.verdict, report, witness, min_depth, rank_by_depth, bset)
