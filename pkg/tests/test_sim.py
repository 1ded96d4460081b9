import io

import numpy as np
import pytest

from hypospde.presets import burgers, ou, rd_cubic
from hypospde.problem import ProblemError, ProblemSpec
from hypospde.rng import path_seed
from hypospde.sim import (BlowUpError, BrownianPath, adjoint_backward, brownian_increments, integrate,
                          integrate_shifted, jacobian_forward, jacobian_matrices, path_to_csv, sample_path,
                          simulate_batch)
from hypospde.tensor import PolyMap, PolySum


def test_sample_path_basics():
    p = sample_path(1, 2, 1.0, 5)
    assert p.values.shape == (2, 2) and np.all(p.values[:, 0] == 0)
    q = sample_path(1, 2, 1.0, 5)
    assert np.array_equal(p.values, q.values)
    assert not np.array_equal(sample_path(10, 2, 1.0, 6).values, sample_path(10, 2, 1.0, 5).values)


def test_batch_increments_match_single_paths():
    seeds = [path_seed(0, i) for i in range(3)]
    dW = brownian_increments(seeds, 7, 2, 0.5)
    for s, inc in zip(seeds, dW):
        np.testing.assert_allclose(inc.T, sample_path(7, 2, 0.5, s).increments, rtol=0, atol=1e-15)


def test_terminal_variance():
    S = 100_000
    dW = brownian_increments(range(S), 1, 2, 2.0)
    W = dW[:, 0, :]
    var = W.var(axis=0, ddof=1)
    # chi-square: sd of the sample variance is T sqrt(2/(S-1))
    assert np.all(np.abs(var - 2.0) <= 3 * 2.0 * np.sqrt(2 / (S - 1)))


def test_linear_homogeneous_exact():
    P = ProblemSpec((1, 3), PolySum([], dim=2), ((0, 0),))
    u0 = np.array([1.0, -2.0])
    for M in (1, 7, 100):
        traj = integrate(P, sample_path(M, 1, 1.0, 0), u0)
        np.testing.assert_allclose(traj.states[:, -1], np.exp(-np.array([1, 3])) * u0, rtol=1e-14)


def test_ou_covariance():
    lam = np.array([1.0, 2.0])
    P = ou([1, 2], [(1, 0), (0, 1)])
    S, M = 10_000, 50
    dW = brownian_increments(range(S), M, 2, 1.0)
    U = simulate_batch(P, dW, 1.0 / M, np.zeros(2))[:, -1]
    cov = np.cov(U.T)
    # the post-propagated noise gives sum_j e^{-2 lam (T - t_j)} dt exactly
    dt = 1.0 / M
    scheme = np.array([np.sum(np.exp(-2 * l * dt * np.arange(1, M + 1))) * dt for l in lam])
    exact = (1 - np.exp(-2 * lam)) / (2 * lam)
    se = np.sqrt(2 / S) * exact
    assert np.all(np.abs(np.diag(cov) - exact) <= 3 * se + np.abs(scheme - exact))
    assert abs(cov[0, 1]) < 4 * np.sqrt(exact[0] * exact[1] / S)


def test_strong_self_convergence():
    P = rd_cubic(4)
    # the coarsest usable grid (dt = 1/256) is already past the stiff transient
    fine_M, factors = 8192, (32, 16, 8, 4)
    errs = []
    for seed in range(20):
        fine = sample_path(fine_M, 1, 1.0, path_seed(11, seed))
        ref = integrate(P, fine).states[:, -1]
        row = []
        for f in factors:
            row.append(np.linalg.norm(integrate(P, fine.subsample(f)).states[:, -1] - ref))
        errs.append(row)
    errs = np.sqrt(np.mean(np.square(errs), axis=0))
    dts = np.array(factors) / fine_M
    order = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 0.4 <= order <= 1.1


def test_shift_consistency_burgers():
    P = burgers(4)
    gaps = []
    for M in (100, 400):
        g = 0.0
        for i in range(100):
            path = sample_path(M, 1, 1.0, path_seed(3, i))
            u = integrate(P, path).states
            v = integrate_shifted(P, path)
            g = max(g, float(np.max(np.abs(v.u_states() - u))))
        gaps.append(g)
    assert gaps[1] < gaps[0]
    # C dt^{1/2}: quartering the step should at least halve the gap (up to MC slack)
    assert gaps[1] <= 0.6 * gaps[0]


def test_shift_zero_path():
    P = rd_cubic(3)
    path = BrownianPath(np.zeros((1, 51)), 1.0)
    u0 = np.array([0.3, -0.1, 0.2])
    np.testing.assert_allclose(integrate_shifted(P, path, u0).states, integrate(P, path, u0).states,
                               rtol=0, atol=1e-15)


def test_shift_ou():
    P = ou([1, 2], [(1, 1)])
    for M in (200, 800):
        path = sample_path(M, 1, 1.0, 4)
        gap = np.max(np.abs(integrate_shifted(P, path).u_states() - integrate(P, path).states))
        assert gap < 5.0 / M ** 0.5


def test_duality_and_identity():
    P = rd_cubic(4)
    path = sample_path(300, 1, 1.0, 9)
    traj = integrate(P, path, np.array([0.1, 0.0, -0.2, 0.05]))
    rng = np.random.default_rng(0)
    for _ in range(20):
        xi, h = rng.normal(size=4), rng.normal(size=4)
        s = int(rng.integers(0, 301))
        rho = adjoint_backward(P, traj, xi)
        lhs = rho[s] @ h
        rhs = xi @ jacobian_forward(P, traj, s, h)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(rhs), np.linalg.norm(xi) * np.linalg.norm(h) * 1e-3)
    h = rng.normal(size=4)
    assert np.array_equal(jacobian_forward(P, traj, 300, h), h)
    np.testing.assert_array_equal(adjoint_backward(P, traj, h)[-1], h)


def test_linear_flow_jacobian():
    P = ou([1, 2, 5], [(1, 0, 0)])
    path = sample_path(100, 1, 1.0, 1)
    traj = integrate(P, path)
    h = np.array([1.0, 1.0, 1.0])
    lam = np.array([1, 2, 5.0])
    np.testing.assert_allclose(jacobian_forward(P, traj, 40, h), np.exp(-lam * 0.6), rtol=1e-13)
    np.testing.assert_allclose(adjoint_backward(P, traj, h)[40], np.exp(-lam * 0.6), rtol=1e-13)


def test_finite_difference_jacobian():
    P = rd_cubic(4)
    path = sample_path(500, 1, 1.0, 2)
    u0 = np.array([0.2, -0.1, 0.05, 0.0])
    h = np.array([0.3, 0.5, -0.2, 0.7])
    delta = 1e-6
    a = integrate(P, path, u0).states[:, -1]
    b = integrate(P, path, u0 + delta * h).states[:, -1]
    J = jacobian_forward(P, integrate(P, path, u0), 0, h)
    assert np.linalg.norm(J - (b - a) / delta) / np.linalg.norm(J) <= 1e-4


def test_jacobian_matrices_consistent():
    P = rd_cubic(3)
    path = sample_path(80, 1, 1.0, 3)
    traj = integrate(P, path)
    Js = jacobian_matrices(P, traj)
    h = np.array([1.0, -1.0, 0.5])
    np.testing.assert_allclose(Js[-1] @ h, jacobian_forward(P, traj, 0, h), rtol=1e-12)


def test_blow_up_guard():
    # F(u) = u^2 on one mode explodes in finite time
    P = ProblemSpec((1,), PolySum([PolyMap(2, 1, {(0, (0, 0)): 1})]), ((0,),))
    with pytest.raises(BlowUpError) as err:
        integrate(P, sample_path(1000, 1, 1.0, 0), np.array([10.0]))
    assert err.value.step > 0


def test_problem_validation():
    with pytest.raises(ProblemError):
        ProblemSpec((2, 1), PolySum([], dim=2), ((1, 0),))
    with pytest.raises(ProblemError):
        ProblemSpec((0,), PolySum([], dim=1), ((1,),))
    with pytest.raises(ProblemError):
        ProblemSpec((1,), PolySum([], dim=1), ())


def test_csv_export():
    P = ou([1], [(1,)])
    path = sample_path(4, 1, 1.0, 0)
    buf = io.StringIO()
    integrate(P, path).to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,mode0" and len(lines) == 6
    buf = io.StringIO()
    path_to_csv(path, buf)
    assert buf.getvalue().splitlines()[0] == "t,W0"
