import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from sgdchain import oracle as orc


def _stable(seed, d):
    g = np.random.default_rng(seed)
    a = g.standard_normal((d, d))
    a *= g.uniform(0.1, 0.95) / max(orc.spectral_radius(a), 1e-12)
    b = g.standard_normal((d, d))
    return a, b @ b.T


def test_scalar_fixed_point(oracle_1d):
    spec, noise = oracle_1d
    sol = orc.linear_gaussian_oracle(spec, noise, 0.1)
    assert sol.stat_cov[0, 0] == pytest.approx(0.01 / 0.19, rel=1e-14)
    assert sol.residual <= 1e-15
    assert sol.autocov_trace(3) == pytest.approx(0.9**3 * 0.01 / 0.19)


@given(st.integers(0, 10_000), st.integers(1, 20))
@settings(max_examples=100, deadline=None)
def test_lyapunov_residual_random_stable(seed, d):
    a, q = _stable(seed, d)
    v = orc.solve_stationary_cov(a, q)
    assert orc.lyapunov_residual(a, q, v) <= 1e-12 * max(1.0, np.abs(v).max())
    np.testing.assert_allclose(v, v.T, atol=1e-12 * np.abs(v).max())


def test_unstable_and_oversize_rejected():
    with pytest.raises(orc.OracleError):
        orc.solve_stationary_cov(np.array([[1.1]]), np.array([[1.0]]))
    with pytest.raises(orc.OracleError):
        orc.solve_stationary_cov(0.5 * np.eye(51), np.eye(51))
    with pytest.raises(orc.OracleError):
        orc.solve_stationary_cov(np.array([[0.5]]), np.array([[-1.0]]))


def _gauss(seed, d):
    g = np.random.default_rng(seed)
    m = g.standard_normal(d)
    b = g.standard_normal((d, d))
    return m, b @ b.T + 0.01 * np.eye(d)


@given(st.integers(0, 10**6), st.integers(1, 4))
@settings(max_examples=200, deadline=None)
def test_w2_triangle_and_symmetry(seed, d):
    p, q, r = _gauss(seed, d), _gauss(seed + 1, d), _gauss(seed + 2, d)
    pq = orc.gaussian_w2(*p, *q)
    assert pq == pytest.approx(orc.gaussian_w2(*q, *p), rel=1e-6, abs=1e-9)
    assert pq <= orc.gaussian_w2(*p, *r) + orc.gaussian_w2(*r, *q) + 1e-9
    # the Bures term cancels in floating point; its square root amplifies the residue
    assert orc.gaussian_w2(*p, *p) ** 2 <= 1e-10 * np.trace(p[1])


def test_w2_closed_forms():
    assert orc.gaussian_w2([0.0], [[1.0]], [3.0], [[4.0]]) == pytest.approx(math.sqrt(9 + 1))
    c = np.diag([1.0, 4.0])
    assert orc.gaussian_w2(np.zeros(2), c, np.zeros(2), 4 * c) == pytest.approx(math.sqrt(1 + 4))


@given(st.floats(-3, 3), st.floats(0.05, 4), st.floats(-3, 3), st.floats(0.05, 4))
@settings(max_examples=60, deadline=None)
@example(0.0, 0.05, 1.0, 0.05000000000000001)  # variances equal up to rounding
def test_tv_quadrature_matches_closed_form(m1, v1, m2, v2):
    a = orc.tv_gaussian_1d(m1, v1, m2, v2)
    b = orc.tv_gaussian_1d_exact(m1, v1, m2, v2)
    assert 0 <= a <= 1
    assert a == pytest.approx(b, abs=1e-8)


def test_ar1_law_and_average_law(oracle_1d):
    spec, noise = oracle_1d
    sol = orc.linear_gaussian_oracle(spec, noise, 0.1)
    m, c = orc.ar1_marginal_law(sol, [2.0], 5)
    assert m[0] == pytest.approx(2 * 0.9**5)
    assert c[0, 0] == pytest.approx(0.01 * (1 - 0.81**5) / 0.19)
    # started at stationarity the average law matches the stationary formula
    a, v = 0.9, sol.stat_cov[0, 0]
    m, c = orc.pr_average_law(sol, [0.0], 0, 50, init_cov=[[v]])
    assert c[0, 0] == pytest.approx(orc.stationary_average_variance_1d(a, v, 50), rel=1e-10)


def test_average_law_against_brute_force():
    a = np.array([[0.8, 0.1], [0.0, 0.7]])
    q = np.array([[0.2, 0.05], [0.05, 0.1]])
    sol = orc.OracleSolution(a, q, orc.solve_stationary_cov(a, q), np.zeros(2))
    n0, n = 3, 6
    # brute force through the joint covariance of (x_1..x_{n0+n})
    T = n0 + n
    cov = [[None] * (T + 1) for _ in range(T + 1)]
    marg = [np.zeros((2, 2))]
    for t in range(1, T + 1):
        marg.append(a @ marg[-1] @ a.T + q)
    avg = np.zeros((2, 2))
    for i in range(n0 + 1, T + 1):
        for j in range(n0 + 1, T + 1):
            lo, hi = min(i, j), max(i, j)
            c = np.linalg.matrix_power(a, hi - lo) @ marg[lo]
            avg += c if i >= j else c.T
    m, c = orc.pr_average_law(sol, [1.0, -1.0], n0, n)
    np.testing.assert_allclose(c, avg / n**2, rtol=1e-12)
    expect = sum(np.linalg.matrix_power(a, t) @ np.array([1.0, -1.0]) for t in range(n0 + 1, T + 1)) / n
    np.testing.assert_allclose(m, expect, rtol=1e-12)


def test_density_ratio():
    assert orc.gaussian_density_ratio_sup([0.0], [[1.0]], [0.0], [[2.0]]) == pytest.approx(math.sqrt(2))
    assert math.isinf(orc.gaussian_density_ratio_sup([0.0], [[2.0]], [0.0], [[1.0]]))
    r = orc.gaussian_density_ratio_sup([1.0], [[0.5]], [0.0], [[1.0]])
    xs = np.linspace(-10, 10, 200_001)
    ratio = np.exp(-(xs - 1) ** 2 / 1.0) / math.sqrt(0.5) / np.exp(-xs**2 / 2)
    assert r == pytest.approx(ratio.max(), rel=1e-6)
