import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypospde.norris import (FAMILIES, CoeffProcess, ProcessFamily, TermBudgetExceeded, WienerPolyProcess,
                             bracket_expansion_check, classify, dichotomy_check, enumerate_multiindices,
                             eval_Z, exceptional_probability, expansion_convergence, expansion_terms, label,
                             multiindex_count, multiindex_factorial, random_process, thresholds,
                             wiener_monomial)
from hypospde.presets import ks, ou, rd_cubic
from hypospde.rng import generator, path_seed
from hypospde.sim import BrownianPath, integrate_shifted, sample_path
from hypospde.symbolic import from_polymap, symbolic_vectorfield_bracket, variables
from hypospde.tensor import PolySum, constant, linear


def _const(proc_coeffs, steps, d=1, m=1):
    return WienerPolyProcess(d, m, {a: CoeffProcess.constant(c, steps) for a, c in proc_coeffs.items()})


def test_enumerate_examples():
    assert enumerate_multiindices(2, 2) == [(), (0,), (0, 0), (0, 1), (1,), (1, 1)]
    assert len(enumerate_multiindices(3, 3)) == multiindex_count(3, 3) == 20
    assert enumerate_multiindices(1, 0) == [()]
    assert multiindex_factorial((0, 0, 1)) == 2 and multiindex_factorial(()) == 1
    assert label(()) == "()" and label((0, 1)) == "(1,2)"
    with pytest.raises(TermBudgetExceeded) as err:
        enumerate_multiindices(10, 10, budget=100)
    assert err.value.count == multiindex_count(10, 10)


def test_monomials_and_Z():
    path = BrownianPath(np.array([[0.0, 1.0, 2.0], [0.0, -1.0, 3.0]]), 1.0)
    assert wiener_monomial(path, (0, 1), 2) == 6.0
    assert list(wiener_monomial(path, (0, 1))) == [0.0, -1.0, 6.0]
    assert list(wiener_monomial(path, ())) == [1.0, 1.0, 1.0]
    proc = _const({(): 0.5, (0,): 1.0}, 2, d=2)
    np.testing.assert_array_equal(eval_Z(proc, path), [0.5, 1.5, 2.5])


def test_thresholds_example():
    small, rough = thresholds(1e-3, 1)
    assert abs(small - 0.1) < 1e-12 and abs(rough - 10 ** (1 / 3)) < 1e-12
    assert abs(rough - 2.154) < 1e-3
    assert thresholds(1.0, 3) == (1.0, 1.0)


def test_outcome_examples():
    path = BrownianPath(np.array([[0.0, 0.1, -0.1, 0.05]]), 1.0)
    assert dichotomy_check(_const({(): 1.0}, 3), path, 1e-2).outcome == "VACUOUS"
    assert dichotomy_check(_const({(): 1e-3}, 3), path, 1e-2).outcome == "SMALL_COEFF"
    # A_() tracks -W exactly with a steep slope: small Z, big Lipschitz constant
    rough = BrownianPath(np.array([[0.0, 1.0, -1.0, 0.5]]), 1.0)
    vals = -rough.values[0]
    big = WienerPolyProcess(1, 1, {(): CoeffProcess(vals, 6.0), (0,): CoeffProcess.constant(1.0, 3)})
    out = dichotomy_check(big, rough, 1e-3)
    assert out.outcome == "LARGE_LIP" and out.z_sup == 0.0
    # a = 0, b = 1 on a path of range 0.2: Z small relative to eps = 0.1 but b is not small
    out = dichotomy_check(_const({(0,): 1.0}, 3), path, 0.1)
    assert out.outcome == "VIOLATION"


def test_m_zero_examples():
    path = sample_path(50, 1, 1.0, 0)
    proc = WienerPolyProcess(1, 0, {(): CoeffProcess(np.linspace(0, 1e-3, 51), 1e-3)})
    assert dichotomy_check(proc, path, 1e-2).outcome == "SMALL_COEFF"
    assert dichotomy_check(proc, path, 1e-4).outcome == "VACUOUS"


def test_argument_errors():
    path = sample_path(10, 1, 1.0, 0)
    proc = _const({(): 1.0}, 10)
    for eps in (0.0, -1.0, 1.5):
        with pytest.raises(ValueError):
            dichotomy_check(proc, path, eps)
    with pytest.raises(ValueError):
        dichotomy_check(proc, sample_path(10, 1, 2.0, 0), 0.1)
    with pytest.raises(ValueError):
        CoeffProcess(np.array([0.0, 1.0]), 0.5)
    with pytest.raises(ValueError):
        WienerPolyProcess(1, 1, {(0, 0): CoeffProcess.constant(1.0, 10)})
    with pytest.raises(ValueError):
        WienerPolyProcess(2, 2, {(1, 0): CoeffProcess.constant(1.0, 10)})
    with pytest.raises(ValueError):
        ProcessFamily("nope", 1, 1)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eps=st.floats(1e-6, 1.0))
def test_m_zero_never_violates(seed, eps):
    rng = np.random.default_rng(seed)
    path = sample_path(40, 1, 1.0, seed)
    proc = random_process(rng, path, 1, 0)
    assert dichotomy_check(proc, path, eps).outcome != "VIOLATION"


@settings(max_examples=100, deadline=None)
@given(m=st.integers(0, 4), a=st.floats(1e-8, 1.0), b=st.floats(1e-8, 1.0))
def test_thresholds_monotone(m, a, b):
    lo, hi = min(a, b), max(a, b)
    s_lo, r_lo = thresholds(lo, m)
    s_hi, r_hi = thresholds(hi, m)
    assert s_lo <= s_hi and r_lo >= r_hi
    assert s_hi <= 1 <= r_hi


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 2), m=st.integers(0, 2))
def test_classify_matches_scalar_check(seed, d, m):
    rng = np.random.default_rng(seed)
    path = sample_path(60, d, 1.0, seed)
    proc = random_process(rng, path, d, m)
    for eps in (1e-3, 1e-1, 0.7):
        out = dichotomy_check(proc, path, eps)
        code = int(classify(out.z_sup, out.coeff_sup, out.lip_sup, eps, m))
        assert out.outcome == ("VACUOUS", "SMALL_COEFF", "LARGE_LIP", "VIOLATION")[code]


@pytest.mark.parametrize("seed", range(8))
def test_constant_range_oracle(seed):
    # with constant A_() = a, A_1 = b and W(0) = 0, a violation exists iff range(W) < 2 eps^(2/3)
    path = sample_path(200, 1, 1.0, seed)
    W = path.values[0]
    r = W.max() - W.min()
    for eps in np.geomspace(1e-3, 1.0, 25):
        b = eps ** (1 / 3) * (1 + 1e-9)
        a = -b * (W.max() + W.min()) / 2
        hit = dichotomy_check(_const({(): a, (0,): b}, 200), path, eps).outcome == "VIOLATION"
        if abs(r - 2 * eps ** (2 / 3)) > 1e-6:
            assert hit == (r < 2 * eps ** (2 / 3))


def test_constant_family_respects_oracle():
    fam = ProcessFamily("constant", 1, 1)
    eps = np.geomspace(1e-2, 0.9, 10)
    curve = exceptional_probability(fam, eps, 200, 50, master_seed=3)
    # a charged path must have a narrow range, so the oracle frequency bounds the curve
    ranges = np.array([np.ptp(sample_path(200, 1, 1.0, path_seed(3, 2 * i)).values[0]) for i in range(200)])
    bound = np.array([np.mean(ranges < 2 * e ** (2 / 3)) for e in curve.epsilons])
    assert np.all(curve.frequencies <= bound)


@pytest.mark.parametrize("kind", sorted(FAMILIES))
@pytest.mark.parametrize("d,m", [(1, 1), (2, 1), (2, 2)])
def test_family_processes_are_valid(kind, d, m):
    # CoeffProcess rejects any coefficient steeper than its declared bound
    path = sample_path(200, d, 1.0, 1)
    procs = ProcessFamily(kind, d, m).sample(path, generator(5), 5)
    assert len(procs) == 5
    for p in procs:
        assert all(len(a) <= m for a in p.coeffs)
        assert eval_Z(p, path).shape == (201,)


def test_tracker_decays_and_is_reproducible():
    fam = ProcessFamily("tracker", 1, 1)
    eps = [0.46, 0.2, 0.1, 0.046, 0.02]
    a = exceptional_probability(fam, eps, 300, 30, master_seed=1)
    b = exceptional_probability(fam, eps, 300, 30, master_seed=1, chunk=7, workers=2)
    np.testing.assert_array_equal(a.path_violations, b.path_violations)
    assert a.frequencies[0] > 0
    assert a.is_monotone()
    assert np.all(a.pair_frequencies <= a.frequencies)


def test_violation_csv():
    fam = ProcessFamily("constant", 1, 1)
    curve = exceptional_probability(fam, [0.5, 0.1], 20, 5, master_seed=0)
    buf = io.StringIO()
    curve.to_csv(buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "eps,trials,violations,frequency,stderr,pair_trials,pair_violations"
    assert len(rows) == 3 and rows[1].startswith("0.5,20,")
    assert rows[1].split(",")[5] == "100"


# -- bracket expansion ------------------------------------------------------------------
def test_expansion_constant_G_linear():
    P = ou([1, 2, 3], [(1, 0, 1)])
    h = (1, -1, 2)
    terms = expansion_terms(P, constant(h))
    assert list(terms) == [()]
    assert terms[()] == PolySum([constant((1, -2, 6))])


def test_expansion_terms_match_symbolic():
    P = rd_cubic(2)
    G = PolySum([constant(P.noise[0])], dim=2)
    terms = expansion_terms(P, G)
    x = variables(2)
    K = from_polymap(P.drift(), x)
    q = from_polymap(G, x)
    g = from_polymap(G, x)
    fact = 1
    for order in range(4):
        if order:
            K = tuple(-c for c in symbolic_vectorfield_bracket(K, q))
            fact *= order
        expect = [c * (1 / fact) if fact > 1 else c for c in symbolic_vectorfield_bracket(K, g)]
        alpha = (0,) * order
        got = from_polymap(terms[alpha], x) if alpha in terms else None
        if all(c.is_zero for c in expect):
            assert alpha not in terms
        else:
            assert all((a - b).is_zero for a, b in zip(got, expect))


def test_expansion_linear_map_G():
    P = rd_cubic(2)
    G = linear([[1, 2], [0, 1]])
    terms = expansion_terms(P, G)
    assert () in terms and all(len(a) <= 3 for a in terms)


def test_expansion_residual_shape_and_size():
    P = rd_cubic(3)
    path = sample_path(400, 1, 1.0, 2)
    traj = integrate_shifted(P, path)
    rep = bracket_expansion_check(P, traj, path, constant(P.noise[0]), np.ones(3) / np.sqrt(3))
    assert rep.residual.shape == (400,) and rep.lhs.shape == (400,)
    assert rep.relative_sup < 0.5


def test_expansion_convergence_order():
    P = ks(4)
    conv = expansion_convergence(P, constant(P.noise[0]), np.ones(4) / 2, [path_seed(0, i) for i in range(10)])
    assert conv.sups.shape == (10, 3)
    assert conv.order >= 0.9
    assert np.all(np.diff(conv.mean_sups) < 0)


def test_expansion_budget():
    with pytest.raises(TermBudgetExceeded):
        expansion_terms(rd_cubic(2), constant((1, 0)), budget=2)
