"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria run at their stated sizes and tolerances.  Run with
``pytest tests/test_acceptance.py -s`` to see the lines as they happen; they
are also collected in the terminal summary.
"""

import time
from pathlib import Path

import numpy as np
import pytest
import sympy as sp

from _helpers import krylov_rank, random_polymap
from hypospde.brackets import hormander_verdict
from hypospde.config import resolve
from hypospde.experiments import run
from hypospde.malliavin import log_grid, malliavin_batch, malliavin_quadratic_form, tail_fit
from hypospde.norris import ProcessFamily, exceptional_probability, expansion_convergence
from hypospde.presets import PRESETS, get_preset, ou
from hypospde.rng import path_seed
from hypospde.sim import adjoint_backward, integrate, jacobian_forward, sample_path
from hypospde.symbolic import from_polymap, symbolic_vectorfield_bracket, variables
from hypospde.tensor import constant, evaluate, lie_bracket


def test_criterion_01_bracket_correctness(report):
    start = time.time()
    rng = np.random.default_rng(2024)
    worst, bad_law, bad_anti = 0.0, 0, 0
    for _ in range(200):
        n = int(rng.integers(1, 5))
        k, l = int(rng.integers(0, 4)), int(rng.integers(0, 4))
        G1, G2 = random_polymap(rng, k, n), random_polymap(rng, l, n)
        br = lie_bracket(G1, G2)
        if not br.is_zero() and br.degree != k + l - 1:
            bad_law += 1
        if not (br + lie_bracket(G2, G1)).is_zero():
            bad_anti += 1
        x = variables(n)
        sym = symbolic_vectorfield_bracket(from_polymap(G1, x), from_polymap(G2, x))
        f = sp.lambdify(x, [p.as_expr() for p in sym], "numpy")
        fb = br.to_float()
        for _ in range(20):
            u = rng.normal(size=n)
            want = np.array(f(*u), dtype=float)
            got = evaluate(fb, u)
            worst = max(worst, np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-300)
                        if np.any(want) else np.linalg.norm(got))
    elapsed = time.time() - start
    ok = worst <= 1e-10 and bad_law == 0 and bad_anti == 0 and elapsed < 10
    report(1, ok, f"max rel err {worst:.2e}, degree-law failures {bad_law}, antisymmetry failures {bad_anti}, "
                  f"{elapsed:.1f} s")
    assert ok


def test_criterion_02_kalman_equivalence(report):
    start = time.time()
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(50):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 3))
        eigs = sorted(int(x) for x in rng.integers(1, 10, n))
        noise = [tuple(int(x) for x in rng.integers(-2, 3, n)) for _ in range(d)]
        if all(not any(q) for q in noise):
            noise[0] = (1,) + (0,) * (n - 1)
        v = hormander_verdict(ou(eigs, noise), n)
        oracle = krylov_rank(eigs, noise)
        if v.report.rank != oracle or v.spans != (oracle == n):
            mismatches += 1
    elapsed = time.time() - start
    ok = mismatches == 0 and elapsed < 5
    report(2, ok, f"{mismatches}/50 mismatches against the Krylov rank, {elapsed:.1f} s")
    assert ok


@pytest.mark.slow
def test_criterion_03_ns_bracket_cascade(report):
    start = time.time()
    v4 = hormander_verdict(get_preset("ns2d-4forced"), 6, exact=True)
    va = hormander_verdict(get_preset("ns2d-axis"), 6, exact=True)
    xi = va.report.certificate_exact
    exact_ok = xi is not None and all(sum(a * b for a, b in zip(xi, v)) == 0
                                      for v in va.brackets.constant_vectors(exact=True))
    xf = np.asarray(va.report.certificate, dtype=float)
    float_gap = max((abs(xf @ np.asarray(v, dtype=float)) for v in va.brackets.constant_vectors()), default=0.0)
    elapsed = time.time() - start
    ok = (v4.verdict == "SPANS" and va.verdict == "DEFICIENT" and exact_ok and float_gap <= 1e-10
          and elapsed < 120)
    report(3, ok, f"4 forced: {v4.verdict} rank {v4.report.rank}/{v4.report.target_dim} "
                  f"(by depth {list(v4.rank_by_depth.values())}); axis: {va.verdict} rank {va.report.rank}, "
                  f"certificate max |<xi,v>| {float_gap:.1e}; {elapsed:.1f} s")
    assert ok


def test_criterion_04_ou_closed_form(report):
    start = time.time()
    P = get_preset("ou-1mode")
    exact = (1 - np.exp(-2.0)) / 2

    def form(M):
        path = sample_path(M, 1, 1.0, 0)
        return malliavin_quadratic_form(P, integrate(P, path), path, [1.0])

    rel = abs(form(10_000) - exact) / exact
    Ms = np.array([100, 200, 400, 800])
    errs = [abs(form(int(M)) - exact) for M in Ms]
    order = -np.polyfit(np.log(Ms), np.log(errs), 1)[0]
    elapsed = time.time() - start
    ok = rel <= 1e-6 and order >= 1 and elapsed < 10
    report(4, ok, f"rel err {rel:.2e} at M = 1e4, order {order:.2f}, {elapsed:.1f} s")
    assert ok


def test_criterion_05_duality(report):
    start = time.time()
    worst_dual, worst_fd = 0.0, 0.0
    for name in PRESETS:
        P = get_preset(name)
        rng = np.random.default_rng(5)
        path = sample_path(200, P.d, 1.0, path_seed(5, 0))
        u0 = 0.1 * rng.normal(size=P.dim)
        traj = integrate(P, path, u0)
        for _ in range(20):
            xi, h = rng.normal(size=P.dim), rng.normal(size=P.dim)
            s = int(rng.integers(0, path.steps + 1))
            lhs = adjoint_backward(P, traj, xi)[s] @ h
            rhs = xi @ jacobian_forward(P, traj, s, h)
            worst_dual = max(worst_dual, abs(lhs - rhs) / max(abs(rhs), 1e-300))
        h = rng.normal(size=P.dim)
        delta = 1e-6
        fd = (integrate(P, path, u0 + delta * h).states[:, -1] - traj.states[:, -1]) / delta
        J = jacobian_forward(P, traj, 0, h)
        worst_fd = max(worst_fd, np.linalg.norm(fd - J) / np.linalg.norm(J))
    elapsed = time.time() - start
    ok = worst_dual <= 1e-10 and worst_fd <= 1e-4 and elapsed < 30
    report(5, ok, f"{len(PRESETS)} presets: max duality rel err {worst_dual:.1e}, max FD rel err {worst_fd:.1e}, "
                  f"{elapsed:.1f} s")
    assert ok


@pytest.mark.slow
def test_criterion_06_degeneracy_coupling(report):
    start = time.time()
    seeds = [path_seed(6, i) for i in range(100)]
    lines, failed = [], []
    for name, info in PRESETS.items():
        P = get_preset(name)
        v = hormander_verdict(P, info.depth, info.target)
        if v.verdict == "DEFICIENT":
            xi = np.asarray(v.report.certificate, dtype=float)
            worst = 0.0
            for s in seeds:
                path = sample_path(200, P.d, 1.0, s)
                worst = max(worst, malliavin_quadratic_form(P, integrate(P, path), path, xi))
            good = worst <= 1e-8
            lines.append(f"{name} DEFICIENT max <xi,M xi> {worst:.1e}")
        else:
            N = v.report.target_dim
            mats = malliavin_batch(P, seeds, 1.0, N, steps=200)
            lam = np.linalg.eigvalsh(mats)[:, 0].min()
            good = lam > 0
            lines.append(f"{name} SPANS min lambda_min {lam:.1e}")
        if not good:
            failed.append(name)
    elapsed = time.time() - start
    ok = not failed and elapsed < 300
    report(6, ok, "; ".join(lines) + f"; failing: {failed or 'none'}; {elapsed:.1f} s")
    assert ok


@pytest.mark.slow
def test_criterion_07_tail_slope(report):
    start = time.time()
    fit = tail_fit(get_preset("rd-cubic-n"), 1.0, 4, 10_000, log_grid(1e-6, 1e-1), master_seed=7)
    lb = fit.lower_bound()
    elapsed = time.time() - start
    ok = lb is not None and lb > 0 and elapsed < 1800
    p = "withheld" if fit.fitted_p is None else f"{fit.fitted_p:.3f} +- {fit.stderr:.3f}"
    report(7, ok, f"fitted_p {p}, 95% lower bound {lb}, {elapsed:.1f} s")
    assert ok


@pytest.mark.slow
def test_criterion_08_norris_dichotomy(report):
    start = time.time()
    grid = log_grid(1e-4, 1e-1, 6)
    wide = log_grid(1e-4, 1.0, 6)
    notes, ok = [], True

    # m = 0: 10^5 process/path pairs per family on the wide grid
    for kind in ("constant", "tracker"):
        c = exceptional_probability(ProcessFamily(kind, 1, 0), wide, 1000, 100, master_seed=80)
        hits = int(c.pair_violations.sum())
        ok &= hits == 0
        notes.append(f"m=0 {kind}: {hits} violations in {c.path_count * c.processes_per_path} pairs")

    for d, m in ((1, 1), (2, 1), (2, 2)):
        c = exceptional_probability(ProcessFamily("constant", d, m), grid, 1000, 100, master_seed=81)
        hits = int(c.pair_violations.sum())
        ok &= hits == 0
        notes.append(f"constant d={d} m={m}: {hits} violations")

    for kind, d, m in (("tracker", 1, 1), ("tracker", 2, 1), ("tracker", 2, 2),
                       ("resonant", 1, 1), ("resonant", 1, 2)):
        c = exceptional_probability(ProcessFamily(kind, d, m), grid, 1000, 100, master_seed=82)
        mono = c.is_monotone(2.0)
        ok &= mono
        f = ", ".join(f"{x:.3f}" for x in c.frequencies[:4])
        notes.append(f"{kind} d={d} m={m}: monotone={mono} (largest-eps freqs {f})")
    elapsed = time.time() - start
    ok &= elapsed < 1200
    report(8, ok, "; ".join(notes) + f"; {elapsed:.1f} s")
    assert ok


def test_criterion_09_expansion_identity(report):
    start = time.time()
    notes, ok = [], True
    for name in ("rd-cubic-n", "burgers-n"):
        P = get_preset(name)
        xi = np.ones(P.dim) / np.sqrt(P.dim)
        conv = expansion_convergence(P, constant(P.noise[0]), xi, [path_seed(9, i) for i in range(10)])
        ok &= conv.order >= 0.9
        notes.append(f"{name}: order {conv.order:.2f} +- {conv.order_stderr:.2f} "
                     f"(mean sup {', '.join(f'{x:.2e}' for x in conv.mean_sups)})")
    elapsed = time.time() - start
    ok &= elapsed < 300
    report(9, ok, "; ".join(notes) + f"; {elapsed:.1f} s")
    assert ok


SCENARIOS = [
    {"problem": {"preset": "rd-cubic-n"}, "experiment": {"kind": "malliavin-tail", "seed": 3, "samples": 300,
                                                        "steps": 100}},
    {"problem": {"preset": "ou-2mode"}, "experiment": {"kind": "density", "seed": 3, "N": 2, "samples": 500,
                                                      "steps": 50}},
    {"experiment": {"kind": "norris-dichotomy", "seed": 3, "paths": 50, "processes": 20}},
    {"problem": {"preset": "burgers-n"}, "experiment": {"kind": "identity-check", "seed": 3, "paths": 2}},
    {"problem": {"preset": "ks-n"}, "experiment": {"kind": "simulate", "seed": 3, "steps": 200}},
    {"problem": {"preset": "rd-cubic-dirichlet-n"}, "experiment": {"kind": "hormander-check"}},
]


def test_criterion_10_reproducibility(report, tmp_path):
    differing = []
    compared = 0
    for k, raw in enumerate(SCENARIOS):
        a, b = tmp_path / f"{k}a", tmp_path / f"{k}b"
        run(resolve(raw), a)
        run(resolve(raw), b)
        for f in sorted(Path(a).glob("*.csv")):
            compared += 1
            if f.read_bytes() != (b / f.name).read_bytes():
                differing.append(f"{raw['experiment']['kind']}/{f.name}")
    ok = not differing and compared > 0
    report(10, ok, f"{compared} CSV bodies compared across {len(SCENARIOS)} experiment kinds; "
                   f"differing: {differing or 'none'}")
    assert ok
