"""Acceptance suite: criteria 1-11, one PASS/FAIL line printed per criterion."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from sgdchain import engine, oracle as orc
from sgdchain.cli import main
from sgdchain.diagnostics import checks as ck, estimators as est
from sgdchain.diagnostics.report import strip_timestamp
from sgdchain.model import (
    NoiseModel,
    estimate_k_bar,
    make_spec,
    minibatch_conditions,
    random_design_psi1_constants,
)

ROOT = Path(__file__).resolve().parents[1]
BETA = 0.1


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    print(f"\n[acceptance {n:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def oracle_problem():
    noise = NoiseModel.additive_gaussian([[1.0]])
    return make_spec("quadratic", [0.0], [[1.0]], noise), noise


def test_01_stationary_variance_oracle(oracle_problem):
    spec, noise = oracle_problem
    exact = orc.linear_gaussian_oracle(spec, noise, BETA).stat_cov[0, 0]
    bound = BETA * 1.0 / (2 * 1.0 - BETA * 1.0)
    t0 = time.perf_counter()
    ens = engine.run_ensemble(spec, noise, BETA, spec.theta_star, 500, [500], 100_000, 101, threads=1)
    elapsed = time.perf_counter() - t0
    x = ens.at(500)[:, 0]
    var = float(x.var(ddof=1))
    rel_exact = abs(var - exact) / exact
    rel_bound = abs(var - bound) / bound
    checks = ck.check_variance_bias_bounds(ens.at(500), spec, BETA)
    ok = rel_exact <= 0.03 and rel_bound <= 0.03 and checks[0].passed and elapsed < 30
    verdict(1, "stationary variance matches the Lyapunov fixed point", ok,
            f"Var={var:.6f} exact={exact:.6f} (rel {rel_exact:.3%}) bound={bound:.6f} (rel {rel_bound:.3%}) "
            f"runtime {elapsed:.1f}s single-threaded")


def test_02_coupling_contraction(oracle_problem):
    spec, noise = oracle_problem
    t0 = time.perf_counter()
    run = engine.run_coupled_pair(spec, noise, BETA, [2.0], [-1.0], 50, 10_000, 202)
    lin = {c.claim_id: c for c in ck.check_coupling_contraction(run, spec, BETA)}
    r, se, valid = ck.coupling_ratios(run.sq_dists)
    target = (1 - BETA) ** 2
    per_step_ok = bool(np.all(np.abs(r[valid] - target) <= 3 * se[valid] + 1e-12 * target))

    sigma = np.diag([1.0, 0.5, 0.25])
    dnoise = NoiseModel.random_design(sigma, 0.5)
    dspec = make_spec("least_squares_random_design", [1.0, -1.0, 0.5], sigma, dnoise)
    drun = engine.run_coupled_pair(dspec, dnoise, 0.05, [3.0, 0.0, 2.0], [-1.0, -2.0, 0.0], 50, 10_000, 203)
    dchk = ck.check_coupling_contraction(drun, dspec, 0.05)
    elapsed = time.perf_counter() - t0
    ok = per_step_ok and lin["coupling_exact_factor"].passed and all(c.passed for c in dchk) and elapsed < 60
    verdict(2, "synchronous coupling contracts", ok,
            f"additive: worst |ratio-0.81| within 3 se = {per_step_ok}; random design worst ratio "
            f"{dchk[0].empirical:.5f} <= factor {dchk[0].bound:.5f} (L_W={dspec.l_w:.4f}, "
            f"{dspec.constant_sources['l_w']}); runtime {elapsed:.1f}s")


def test_03_tv_geometric_decay(oracle_problem):
    spec, noise = oracle_problem
    rho = ck.contraction_factor(spec, BETA)
    times = list(range(0, 61, 3))
    out = {c.claim_id: c for c in ck.check_tv_decay(spec, noise, BETA, [5.0], times, 200_000, 303, path="both")}
    fit = out["tv_geometric_decay"]
    agree = out["tv_binned_agreement"]
    ok = abs(rho - 0.9) < 1e-15 and fit.empirical <= math.log(rho) + 0.01 and agree.empirical <= 0.03
    verdict(3, "TV decays geometrically at the contraction rate", ok,
            f"fitted log-rate {fit.empirical:.5f} <= log(0.9)+0.01 = {math.log(rho) + 0.01:.5f}; "
            f"binned vs analytic sup gap {agree.empirical:.4f} <= 0.03")


def test_04_sqrt_beta_scaling(oracle_problem):
    spec, noise = oracle_problem
    t0 = time.perf_counter()
    # certify the noise constant by Monte Carlo against its closed form
    kbar_est = estimate_k_bar(spec, noise, np.random.Generator(np.random.Philox(key=[404, 0])), 100_000)
    kbar_mc = kbar_est.constant
    betas = [0.0125, 0.025, 0.05, 0.1]
    consts, bounds = [], []
    for i, b in enumerate(betas):
        T = int(math.ceil(15 / (b * spec.mu)))
        ens = engine.run_ensemble(spec, noise, b, spec.theta_star, T, [T], 100_000, 410 + i)
        r = np.abs(ens.at(T)[:, 0] - spec.theta_star[0])
        consts.append(est.estimate_psi2_tilde(r).constant)
        bounds.append(kbar_mc * math.sqrt(8 * b / spec.mu))
    slope = ck.check_sqrt_beta_scaling(betas, consts)
    elapsed = time.perf_counter() - t0
    each = all(c <= bd for c, bd in zip(consts, bounds))
    # the Monte-Carlo constant must not exceed the closed form beyond its own error
    certified = kbar_mc <= spec.k_bar + 3 * kbar_est.mc_error
    ok = slope.passed and each and certified and elapsed < 300
    verdict(4, "concentration constants scale as sqrt(beta)", ok,
            f"slope {slope.empirical:.4f} in [0.4, 0.6]; constants {np.round(consts, 4).tolist()} <= "
            f"{np.round(bounds, 4).tolist()}; K_bar MC {kbar_mc:.5f} <= closed form {spec.k_bar:.5f}; runtime {elapsed:.1f}s")


def test_05_last_iterate_deviation(oracle_problem):
    spec, noise = oracle_problem
    T = 150
    deltas = [0.02, 0.05, 0.1, 0.25]
    ens = engine.run_ensemble(spec, noise, BETA, [1.0], T, [T], 10_000, 505)
    r = np.abs(ens.at(T)[:, 0] - spec.theta_star[0])
    rows, ok = [], True
    for d in deltas:
        radius = ck.last_iterate_radii(spec, BETA, d)["last_iterate_dimension_free_subgaussian"]
        freq = float((r > radius).mean())
        lim = d + 3 * ck.binomial_se(d, r.size)
        ok &= freq <= lim
        rows.append(f"delta={d}: {freq:.4f} <= {lim:.4f}")
    verdict(5, "last-iterate exceedance of the dimension-free radius", ok, "; ".join(rows))


def test_06_tail_average(oracle_problem):
    spec, noise = oracle_problem
    sol = orc.linear_gaussian_oracle(spec, noise, BETA)
    mean, cov = sol.stat_mean + 0.5, 0.5 * sol.stat_cov  # underdispersed nu: bounded density ratio
    n0, ns, R, delta = 200, [100, 1000, 10_000], 4000, 0.05
    ens = engine.run_ensemble(spec, noise, BETA, engine.GaussianInit(mean, cov), n0 + ns[-1], [], R, 606,
                              windows=[(n0, n) for n in ns])
    w2_sq = orc.gaussian_w2(mean, cov, sol.stat_mean, sol.stat_cov) ** 2
    ratio = orc.gaussian_density_ratio_sup(mean, cov, sol.stat_mean, sol.stat_cov)
    rows, rms, ok = [], [], True
    for n in ns:
        law = orc.pr_average_law(sol, mean, n0, n, init_cov=cov)
        out = ck.check_pr_average_bound(ens.window_average(n0, n), spec, BETA, n0, n, [delta], w2_sq=w2_sq,
                                        density_ratio_sup=ratio, oracle_law=law)
        ok &= all(c.passed for c in out)
        rms.append(out[1].data["rms"])
        rows.append(f"n={n}: rms/exact={out[1].empirical:.4f}, exceed={out[0].empirical:.4f}<= "
                    f"{out[0].bound:.4f}+{out[0].allowance:.4f}")
    rate = ck.check_pr_average_rate(ns, rms)
    ok &= rate.passed
    verdict(6, "tail-average RMS, rate and deviation radius", ok,
            "; ".join(rows) + f"; slope {rate.empirical:.4f} in [-0.55, -0.45]")


def test_07_covariance_decay(oracle_problem):
    spec, noise = oracle_problem
    sol = orc.linear_gaussian_oracle(spec, noise, BETA)
    lags = list(range(21))
    init = engine.GaussianInit(sol.stat_mean, sol.stat_cov)
    ens = engine.run_ensemble(spec, noise, BETA, init, 20, lags, 100_000, 707)
    out = ck.check_covariance_decay(ens.stack(lags), spec, BETA, lags, oracle=sol)
    per = out[0].data["per_lag"]
    a, v = 1 - BETA, sol.stat_cov[0, 0]
    match = all(abs(p["empirical"] - a ** p["lag"] * v) <= 3 * p["stderr"] for p in per)
    below = all(p["empirical"] <= p["bound"] for p in per)
    worst = max(abs(p["empirical"] - a ** p["lag"] * v) / p["stderr"] for p in per)
    verdict(7, "stationary autocovariance a^k v and its decay bound", match and below,
            f"max |emp - a^k v| / se = {worst:.2f} <= 3 over lags 0..20; all below bound = {below}")


def test_08_minibatch_boundedness():
    d, C, delta, T, N, beta = 5, 1.0, 0.05, 100, 100, 0.5
    dcov = 0.01 * np.eye(d)
    noise = NoiseModel.random_design(dcov, 0.75)
    spec = make_spec("quadratic", np.zeros(d), np.eye(d), noise, mc_draws=20_000)
    kx, kv = random_design_psi1_constants(dcov, 0.75)
    rep = minibatch_conditions(spec, beta, N, T, delta, C, kx, kv)
    start = np.full(d, 0.5 * C / math.sqrt(d))
    ens = engine.run_ensemble(spec, noise, beta, start, T, [], 400, 808, batch=N, track_max=True)
    chk = ck.check_minibatch_boundedness(ens.max_deviation, C, delta, admissible=not rep.failures())
    ok = not rep.failures() and chk.passed
    verdict(8, "minibatch trajectories stay in the ball", ok,
            f"admissible={not rep.failures()} (N >= {rep['minibatch_size'].threshold:.1f}, "
            f"beta <= {rep['minibatch_step'].threshold:.3g}); escape freq {chk.empirical:.4f} <= "
            f"{delta} + {chk.allowance:.4f}")


def test_09_matrix_concentration():
    d, delta = 5, 0.05
    dcov = np.eye(d)
    kx, kv = random_design_psi1_constants(dcov, 1.0)
    out = ck.check_matrix_concentration(ck.random_design_generator(dcov, 1.0), kx, kv, [100, 400], d, delta,
                                        trials=1000, master_seed=909)
    ok = all(c.passed for c in out)
    verdict(9, "averaged matrix and vector concentration", ok,
            "; ".join(f"{c.claim_id}: {c.empirical:.3f} <= {c.bound}+{c.allowance:.3f}" for c in out))


def test_10_exact_properties():
    tri = ck.check_trinomial(12).passed
    geo = ck.check_geometric_sum(1000, seed=1010)

    g = np.random.default_rng(1011)
    worst_grad = 0.0
    for _ in range(10):
        d = int(g.integers(1, 8))
        b = g.standard_normal((d, d))
        sigma = b @ b.T + 0.1 * np.eye(d)
        spec = make_spec("quadratic", g.standard_normal(d), sigma, NoiseModel.additive_gaussian(np.eye(d)))
        beta = float(g.uniform(0.05, 1.0)) * 2 / (spec.mu + spec.big_l)
        c = ck.check_gradient_step_contraction(spec, beta, n_pairs=100, seed=int(g.integers(1 << 31)))
        worst_grad = max(worst_grad, c.empirical - 1.0)
    grad_ok = worst_grad <= 1e-12

    worst_res = 0.0
    for _ in range(100):
        d = int(g.integers(1, 21))
        a = g.standard_normal((d, d))
        a *= g.uniform(0.05, 0.95) / orc.spectral_radius(a)
        b = g.standard_normal((d, d))
        q = b @ b.T / d
        worst_res = max(worst_res, orc.lyapunov_residual(a, q, orc.solve_stationary_cov(a, q)))
    lyap_ok = worst_res <= 1e-12

    worst_tri = -math.inf
    for _ in range(1000):
        d = int(g.integers(1, 5))
        laws = []
        for _ in range(3):
            b = g.standard_normal((d, d))
            laws.append((g.standard_normal(d), b @ b.T + 1e-3 * np.eye(d)))
        p, q, r = laws
        worst_tri = max(worst_tri, orc.gaussian_w2(*p, *q) - orc.gaussian_w2(*p, *r) - orc.gaussian_w2(*r, *q))
    w2_ok = worst_tri <= 1e-9

    ok = tri and geo.passed and grad_ok and lyap_ok and w2_ok
    verdict(10, "exact property suites", ok,
            f"trinomial={tri}; geometric max rel excess {geo.empirical:.2e}; gradient-step max excess "
            f"{worst_grad:.2e}; Lyapunov max residual {worst_res:.2e}; W2 triangle max excess {worst_tri:.2e}")


def test_11_determinism(tmp_path):
    cfg = str(ROOT / "configs" / "full_suite.yaml")
    a, b = tmp_path / "a", tmp_path / "b"
    sa = main(["run", "--config", cfg, "--out", str(a), "--threads", "1"])
    sb = main(["run", "--config", cfg, "--out", str(b), "--threads", "4"])
    ja = (a / "report.json").read_text()
    jb = (b / "report.json").read_text()
    same_report = strip_timestamp(ja) == strip_timestamp(jb)
    csvs = sorted(p.name for p in a.glob("*.csv"))
    same_csv = all((a / n).read_bytes() == (b / n).read_bytes() for n in csvs)
    n_checks = json.loads(ja)["n_checks"]
    ok = same_report and same_csv and sa == sb == 0
    verdict(11, "full_suite reports are byte-identical across runs", ok,
            f"exit codes {sa},{sb}; {n_checks} checks; report.json identical (timestamp excluded) = "
            f"{same_report}; {len(csvs)} CSV files identical = {same_csv}")
