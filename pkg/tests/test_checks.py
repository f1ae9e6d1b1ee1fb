import json
import math

import numpy as np
import pytest

from sgdchain import engine, oracle as orc
from sgdchain.diagnostics import checks as ck
from sgdchain.diagnostics.report import DiagnosticsReport, strip_timestamp
from sgdchain.model import DomainError, NoiseModel, make_spec


def _stationary(spec, noise, beta, n, seed=0):
    sol = orc.linear_gaussian_oracle(spec, noise, beta)
    g = np.random.default_rng(seed)
    return g.multivariate_normal(sol.stat_mean, sol.stat_cov, size=n)


def test_bound_check_relations():
    assert ck.BoundCheck("stationary_variance_bound", 1.0, 0.9, allowance=0.2).passed
    assert not ck.BoundCheck("stationary_variance_bound", 1.0, 0.9, allowance=0.05).passed
    assert ck.BoundCheck("coupling_exact_factor", 0.81, 0.8, allowance=0.02, relation="eq").passed
    assert not ck.BoundCheck("sqrt_beta_scaling", 0.7, 0.6, relation="in", lower=0.4).passed
    assert ck.BoundCheck("burn_in", 50.0, 2.0, relation="info").passed
    assert not ck.BoundCheck("stationary_variance_bound", math.nan, 1.0).passed
    with pytest.raises(KeyError):
        ck.BoundCheck("no_such_claim", 0.0, 1.0)


def test_contraction_factor(design_3d, oracle_1d):
    spec, _ = oracle_1d
    assert ck.contraction_factor(spec, 0.1) == pytest.approx(0.9)
    spec, _ = design_3d
    b = 0.05
    assert ck.contraction_factor(spec, b) == pytest.approx(math.sqrt((1 - b * spec.mu) ** 2 + b**2 * spec.l_w))


def test_variance_checks_pass_on_exact_law_and_fail_when_inflated(quad_3d):
    spec, noise = quad_3d
    x = _stationary(spec, noise, 0.1, 50_000)
    assert all(c.passed for c in ck.check_variance_bias_bounds(x, spec, 0.1))
    bad = spec.theta_star + 3 * (x - spec.theta_star)
    assert not ck.check_variance_bias_bounds(bad, spec, 0.1)[0].passed


def test_biased_mean_is_detected(quad_3d):
    spec, noise = quad_3d
    x = _stationary(spec, noise, 0.1, 50_000) + 0.05
    unbiased = [c for c in ck.check_variance_bias_bounds(x, spec, 0.1) if c.claim_id == "linear_mean_unbiased"]
    assert not unbiased[0].passed


def test_concentration_refuses_heavy_noise():
    noise = NoiseModel.student_t(3.0, 1.0, 1)
    spec = make_spec("quadratic", [0.0], [[1.0]], noise, k_lip=1.0)
    with pytest.raises(DomainError):
        ck.check_concentration_transfer(np.zeros((20_000, 1)), spec, 0.1, noise=noise)


def test_quantile_bounds_on_half_normal():
    from sgdchain.diagnostics.estimators import half_normal_psi2_tilde

    r = np.abs(np.random.default_rng(2).standard_normal(100_000))
    out = ck.check_quantile_bounds(r, half_normal_psi2_tilde(), [0.01, 0.1, 0.5])
    assert all(c.passed for c in out)
    assert all("one_minus_delta_reading" in c.flags for c in out)


def test_coupling_exact_and_violation(oracle_1d):
    spec, noise = oracle_1d
    run = engine.run_coupled_pair(spec, noise, 0.1, [2.0], [-1.0], 20, 200, 1)
    out = ck.check_coupling_contraction(run, spec, 0.1)
    assert [c.claim_id for c in out] == ["coupling_contraction", "coupling_contraction_geometric",
                                         "coupling_exact_factor"]
    assert all(c.passed for c in out)
    fake = engine.CouplingRun(0.1, 3, np.array([[1.0, 1.0, 1.0], [0.95, 0.95, 0.95]]), "", [], 0, "")
    assert not ck.check_coupling_contraction(fake, spec, 0.1)[0].passed


def test_zero_distance_coupling_is_informational(oracle_1d):
    spec, noise = oracle_1d
    run = engine.run_coupled_pair(spec, noise, 0.1, [1.0], [1.0], 10, 20, 1)
    out = ck.check_coupling_contraction(run, spec, 0.1)
    assert len(out) == 1 and out[0].relation == "info" and out[0].passed


def test_drift_on_oracle(oracle_1d):
    spec, noise = oracle_1d
    ens = engine.run_ensemble(spec, noise, 0.1, engine.GaussianInit([0.0], [[0.5]]), 1, [0, 1], 50_000, 3)
    out = ck.check_drift_condition(ens.at(0), ens.at(1), spec, 0.1)
    assert all(c.passed for c in out)
    assert out[0].empirical == pytest.approx(0.81, abs=0.02)


def test_last_iterate_radii_formulas(oracle_1d):
    spec, _ = oracle_1d
    r = ck.last_iterate_radii(spec, 0.1, 0.05)
    s = 0.1
    assert r["last_iterate_subgaussian_norm"] == pytest.approx(spec.k_bar * math.sqrt(8 * s * math.log(math.e / 0.05)))
    lg = math.log(20)
    assert r["last_iterate_dimension_free_subgaussian"] == pytest.approx(
        math.sqrt(s) + 2 * spec.k_lip * math.sqrt(s * lg))
    assert r["last_iterate_dimension_free_subexp"] >= r["last_iterate_dimension_free_subgaussian"]


def test_last_iterate_needs_replicas(oracle_1d):
    spec, _ = oracle_1d
    with pytest.raises(ck.InsufficientReplicasError):
        ck.check_last_iterate_deviation(np.zeros((100, 1)), spec, 0.1, [0.02], T=10)


def test_remainder_term(oracle_1d):
    spec, _ = oracle_1d
    rem, flags = ck.ergodic_remainder(spec, 0.1, 10, theta0=[2.0])
    assert rem == pytest.approx(0.9**10 * 5)
    assert ck.FLAG_M_ONE in flags


def test_pr_radius_formula(oracle_1d):
    spec, _ = oracle_1d
    b, n0, n, d, w2 = 0.1, 5, 100, 0.05, 0.3
    a, aw = 0.9, 0.9
    first = math.sqrt((2 / n) * ((1 + a) / (1 - a)) * (aw**n0 * w2 + b / 1))
    second = 2 * spec.k_lip * math.sqrt(b) / (1 - aw) * math.sqrt(b + 1 / n) * math.sqrt(math.log(1 / d) / n)
    assert ck.pr_radius(spec, b, n0, n, d, w2) == pytest.approx(first + second)


def test_pr_bound_needs_bounded_density(oracle_1d):
    spec, _ = oracle_1d
    with pytest.raises(DomainError):
        ck.check_pr_average_bound(np.zeros((10, 1)), spec, 0.1, 0, 10, [0.05], w2_sq=0.0,
                                  density_ratio_sup=math.inf)


def test_covariance_decay_on_exact_ar1(oracle_1d):
    spec, noise = oracle_1d
    sol = orc.linear_gaussian_oracle(spec, noise, 0.1)
    g = np.random.default_rng(4)
    R, W = 20_000, 8
    x = np.empty((W, R, 1))
    x[0] = g.normal(0, math.sqrt(sol.stat_cov[0, 0]), (R, 1))
    for t in range(1, W):
        x[t] = 0.9 * x[t - 1] + 0.1 * g.standard_normal((R, 1))
    out = ck.check_covariance_decay(x, spec, 0.1, range(W), oracle=sol)
    assert all(c.passed for c in out)


def test_operator_norm_matches_numpy():
    g = np.random.default_rng(5)
    a = g.standard_normal((50, 4, 4))
    a = a + np.swapaxes(a, 1, 2)
    np.testing.assert_allclose(ck.operator_norm(a), np.linalg.norm(a, ord=2, axis=(1, 2)), rtol=1e-12)


def test_exact_property_checks(quad_3d):
    spec, _ = quad_3d
    assert ck.check_trinomial().passed
    assert ck.check_geometric_sum(200).passed
    assert ck.check_gradient_step_contraction(spec, 0.5).passed
    with pytest.raises(ValueError):
        ck.check_gradient_step_contraction(spec, 1.9)


def test_finite_moment_check_and_heavy_info():
    noise = NoiseModel.student_t(5.0, 1.0, 1)
    spec = make_spec("quadratic", [0.0], [[1.0]], noise)
    x = np.random.default_rng(6).standard_t(5, (40_000, 1)) * 0.2
    out = ck.check_finite_moments(x, spec, 0.1, 0.0, 2, tail_index=5.0)
    assert out[0].passed
    assert out[1].relation == "info" and out[1].claim_id == "heavy_moment_divergence@q=6"


def test_tv_decay_is_one_dimensional(quad_3d):
    spec, noise = quad_3d
    with pytest.raises(DomainError):
        ck.check_tv_decay(spec, noise, 0.1, [0.0, 0.0, 0.0], [0, 1])


def test_report_serialisation_is_stable(oracle_1d):
    spec, _ = oracle_1d
    rep = DiagnosticsReport(spec.summary(), 0.1, kind="unit")
    rep.add(ck.BoundCheck("stationary_variance_bound", 0.05, 0.0526, data={"x": np.float64(1.0)}))
    rep.add(ck.BoundCheck("tv_binned_decay", math.nan, math.nan, relation="info"))
    a, b = rep.to_json(), rep.to_json()
    assert strip_timestamp(a) == strip_timestamp(b)
    doc = json.loads(a)
    assert doc["checks"][1]["empirical"] is None and doc["all_passed"]
    assert rep.to_csv().splitlines()[0].startswith("claim_id,empirical,bound")
    assert len(rep.summary().splitlines()) == 3
