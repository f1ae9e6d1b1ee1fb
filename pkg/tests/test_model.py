import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgdchain import model as m
from sgdchain.model import DomainError, NoiseModel, make_spec, validate_step_size


def test_closed_form_constants(oracle_1d):
    spec, _ = oracle_1d
    assert spec.mu == 1.0 and spec.big_l == 1.0
    assert spec.l_sigma == 0.0 and spec.l_w == 0.0 and spec.sigma_sq == 1.0
    # K solves E exp(Z^2 / K^2) = e for Z ~ N(0, 1)
    assert math.exp(-0.5 * math.log(1 - 2 / spec.k_bar**2)) == pytest.approx(math.e, rel=1e-12)
    assert spec.k_lip == pytest.approx(math.sqrt(0.5))
    assert spec.constant_sources["k_bar"] == "closed_form"


def test_user_constants_are_labelled():
    noise = NoiseModel.additive_gaussian([[1.0]])
    spec = make_spec("quadratic", [0.0], [[1.0]], noise, k_bar=2.0)
    assert spec.k_bar == 2.0 and spec.constant_sources["k_bar"] == "user"


def test_mu_must_match_spectrum():
    noise = NoiseModel.additive_gaussian(np.eye(2))
    with pytest.raises(DomainError):
        make_spec("quadratic", [0.0, 0.0], np.diag([1.0, 2.0]), noise, mu=0.5)


def test_logistic_requires_ball():
    noise = NoiseModel.random_design(np.eye(2), 0.0)
    with pytest.raises(DomainError):
        make_spec("logistic_ball", [0.1, 0.0], np.eye(2), noise)
    with pytest.raises(DomainError):
        make_spec("logistic_ball", [3.0, 0.0], np.eye(2), noise, ball_radius=1.0)


def test_thresholds_match_formulas(quad_3d):
    spec, _ = quad_3d
    rep = validate_step_size(spec, 0.1)
    mu, big_l = spec.mu, spec.big_l
    assert rep["ergodicity"].threshold == pytest.approx(2 * mu / (mu**2 + mu * big_l))
    assert rep["gradient_step_contraction"].threshold == pytest.approx(2 / (mu + big_l))
    assert rep["dimension_free_last_iterate"].threshold == pytest.approx(mu / mu**2)
    assert rep["subexp_norm_transfer"].threshold == pytest.approx(1 / (2 * mu))
    assert "finite_moments" not in rep
    assert validate_step_size(spec, 0.1, j=4)["finite_moments"].threshold == pytest.approx(1 / (4 * mu))


def test_ergodicity_boundary_is_strict(oracle_1d):
    spec, _ = oracle_1d
    assert not validate_step_size(spec, 1.0).admissible("ergodicity")
    assert validate_step_size(spec, 1.0 - 1e-9).admissible("ergodicity")
    with pytest.raises(ValueError):
        validate_step_size(spec, 0.0)


@given(st.floats(0.01, 10.0), st.floats(0.0, 1.0))
def test_admissibility_is_monotone(beta, frac):
    noise = NoiseModel.additive_gaussian(np.eye(2))
    spec = make_spec("quadratic", [0.0, 0.0], np.diag([0.5, 2.0]), noise)
    hi = validate_step_size(spec, beta)
    lo = validate_step_size(spec, max(beta * frac, 1e-6))
    for c in hi.conditions:
        if c.admissible:
            assert lo[c.condition_id].admissible


def test_linear_gradient_and_noise_shapes(quad_3d):
    spec, noise = quad_3d
    th = np.array([2.0, 0.0, 0.0])
    np.testing.assert_allclose(m.gradient(spec, th), spec.sigma_matrix @ (th - spec.theta_star))
    g = np.random.default_rng(0)
    eps = m.noise_sample(spec, noise, th, g, 50_000)
    assert eps.shape == (50_000, 3)
    np.testing.assert_allclose(np.cov(eps.T), noise.cov, atol=0.02)


def test_random_design_noise_moments(design_3d):
    spec, noise = design_3d
    th = spec.theta_star + np.array([1.0, 0.0, 0.0])
    eps = m.noise_sample(spec, noise, th, np.random.default_rng(1), 200_000)
    np.testing.assert_allclose(eps.mean(0), 0.0, atol=0.02)
    assert spec.l_sigma > 0 and spec.constant_sources["l_sigma"].startswith("monte_carlo")


def test_logistic_gradient_vanishes_at_optimum():
    sigma = np.diag([1.0, 0.5])
    noise = NoiseModel.random_design(sigma, 0.0)
    spec = make_spec("logistic_ball", [0.5, -0.3], sigma, noise, ball_radius=2.0)
    assert np.linalg.norm(m.gradient(spec, spec.theta_star)) < 1e-10
    mu, big_l = m.logistic_constants(sigma, 2.0)
    assert 0 < mu <= big_l == pytest.approx(0.25)
    h = m.logistic_hessian(sigma, np.array([0.3, 0.2]))
    ev = np.linalg.eigvalsh(h)
    assert mu - 1e-9 <= ev.min() and ev.max() <= big_l + 1e-9


def test_sampled_gradient_is_unbiased(quad_3d):
    spec, noise = quad_3d
    th = np.array([0.0, 0.0, 0.0])
    g = np.random.default_rng(2)
    draws = np.array([m.sample_gradient(spec, noise, th, g) for _ in range(20_000)])
    np.testing.assert_allclose(draws.mean(0), m.gradient(spec, th), atol=0.03)


def test_problem_round_trip(tmp_path, design_3d):
    spec, noise = design_3d
    path = tmp_path / "p.yaml"
    m.dump_problem(spec, noise, path)
    spec2, noise2 = m.load_problem(path)
    assert m.spec_id(spec, noise) == m.spec_id(spec2, noise2)
    assert spec2.l_sigma == spec.l_sigma


def test_student_t_has_no_subgaussian_constant():
    noise = NoiseModel.student_t(5.0, 1.0, 1)
    spec = make_spec("quadratic", [0.0], [[1.0]], noise)
    assert spec.k_bar is None and noise.finite_moments == 5.0


def test_incompatible_noise_rejected():
    with pytest.raises(DomainError):
        make_spec("least_squares_random_design", [0.0], [[1.0]], NoiseModel.additive_gaussian([[1.0]]))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.1, 5.0), min_size=1, max_size=4))
def test_gaussian_norm_constant_monotone_in_scale(eigs):
    c = np.diag(eigs)
    k1 = m.gaussian_norm_psi2_tilde(c)
    k2 = m.gaussian_norm_psi2_tilde(4 * c)
    assert k2 == pytest.approx(2 * k1, rel=1e-8)
