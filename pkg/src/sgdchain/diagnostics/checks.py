"""Bound checks: an empirical quantity set against a closed-form bound.

Every bound is recomputed from the ``ProblemSpec`` constants inside the check.  Monte
Carlo allowances default to three standard errors; remainder terms whose
constants are not computable are replaced by explicit, flagged substitutes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .. import engine, oracle as orc
from ..model import (
    DomainError,
    NoiseKind,
    NoiseModel,
    ProblemSpec,
    gradient,
    validate_step_size,
)
from . import estimators as est
from .claims import resolve
from .combinatorics import geometric_double_sum, geometric_sum_bound, trinomial_identity

N_SE = 3.0
ROUNDING_FLOOR = 1e-12
FLAG_M_ONE = "remainder_constant_M_set_to_1"
FLAG_RHO_CONTRACTION = "rho_from_contraction_bound"
FLAG_NO_REMAINDER = "remainder_set_to_0_no_L_W"
FLAG_FINITE_FAMILY = "finite_test_functional_family"


class MissingConstantError(ValueError):
    pass


class InsufficientReplicasError(ValueError):
    pass


@dataclass
class BoundCheck:
    """``passed`` iff empirical <= bound + allowance (``le``), |empirical - bound| <= allowance
    (``eq``), lower - allowance <= empirical <= bound + allowance (``in``); ``info`` never fails."""

    claim_id: str
    empirical: float
    bound: float
    mc_error: float = 0.0
    allowance: float = 0.0
    relation: str = "le"
    lower: float | None = None
    flags: list[str] = field(default_factory=list)
    notes: str = ""
    seeds: dict[str, Any] = field(default_factory=dict)
    data: dict[str, Any] = field(default_factory=dict)
    estimate: est.ConcentrationEstimate | None = None
    informative: bool = True
    passed: bool = field(init=False)

    def __post_init__(self):
        resolve(self.claim_id)
        self.empirical = float(self.empirical)
        self.bound = float(self.bound)
        self.passed = self._decide()

    def _decide(self) -> bool:
        e, b, a = self.empirical, self.bound, self.allowance
        if self.relation == "info":
            return True
        if math.isnan(e) or math.isnan(b):
            return False
        if self.relation == "le":
            return e <= b + a
        if self.relation == "eq":
            return abs(e - b) <= a
        if self.relation == "in":
            return self.lower - a <= e <= b + a
        raise ValueError(f"unknown relation {self.relation}")

    @property
    def margin(self) -> float:
        e, b = self.empirical, self.bound
        if self.relation == "eq":
            return self.allowance - abs(e - b)
        if self.relation == "in":
            return min(e - self.lower, b - e)
        return b - e

    def to_dict(self) -> dict[str, Any]:
        return {
            "claim_id": self.claim_id,
            "claim": resolve(self.claim_id).title,
            "empirical": self.empirical,
            "bound": self.bound,
            "lower": self.lower,
            "relation": self.relation,
            "margin": self.margin,
            "pass": self.passed,
            "mc_error": self.mc_error,
            "allowance": self.allowance,
            "flags": list(self.flags),
            "notes": self.notes,
            "seeds": self.seeds,
            "informative": self.informative,
        }


def binomial_se(p: float, n: int) -> float:
    p = min(max(p, 0.0), 1.0)
    return math.sqrt(p * (1 - p) / n)


def _deviations(samples, theta_star) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x - np.asarray(theta_star, dtype=float).reshape(1, -1)


def contraction_factor(spec: ProblemSpec, beta: float) -> float:
    """alpha_W = sqrt((1 - beta mu)^2 + beta^2 L_W); also the TV-rate bound."""
    if spec.l_w is None:
        raise MissingConstantError("L_W is not available for this spec")
    return math.sqrt((1 - beta * spec.mu) ** 2 + beta**2 * spec.l_w)


def variance_bound(spec: ProblemSpec, beta: float) -> float:
    den = 2 * spec.mu - beta * (spec.mu**2 + spec.l_sigma)
    return beta * spec.sigma_sq / den if den > 0 else math.inf


# ---------------------------------------------------------------- stationary moments


def check_variance_bias_bounds(samples, spec: ProblemSpec, beta: float, n_se: float = N_SE) -> list[BoundCheck]:
    x = _deviations(samples, spec.theta_star)
    n = x.shape[0]
    sq = (x * x).sum(1)
    vb = variance_bound(spec, beta)
    out = [
        BoundCheck("stationary_variance_bound", sq.mean(), vb, sq.std(ddof=1) / math.sqrt(n),
                   n_se * sq.std(ddof=1) / math.sqrt(n),
                   notes="second moment about theta*, which dominates the variance",
                   data={"trace_variance": float(x.var(axis=0, ddof=1).sum())})
    ]
    mean = x.mean(0)
    se_vec = x.std(0, ddof=1) / math.sqrt(n)
    bias = float(np.linalg.norm(mean))
    se_bias = float(np.sqrt((se_vec**2).sum()))
    out.append(BoundCheck("stationary_bias_bound", bias, math.sqrt(vb), se_bias, n_se * se_bias))
    if spec.linear:
        z = np.where(se_vec > 0, np.abs(mean) / np.where(se_vec > 0, se_vec, 1), np.where(mean == 0, 0.0, np.inf))
        out.append(BoundCheck("linear_mean_unbiased", float(z.max()), 4.0, notes="max coordinate z-score",
                              data={"mean_offset": mean.tolist(), "stderr": se_vec.tolist()}))
    return out


# ---------------------------------------------------------------- concentration


def _refuse_heavy(noise: NoiseModel | None):
    if noise is not None and noise.kind is NoiseKind.ADDITIVE_STUDENT_T:
        raise DomainError("concentration diagnostics do not apply to heavy-tailed noise")


def probe_directions(d: int, n: int, seed: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=[seed & ((1 << 64) - 1), 0x5EED]))
    u = gen.standard_normal((n, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def check_concentration_transfer(samples, spec: ProblemSpec, beta: float, *, noise: NoiseModel | None = None,
                                 n_directions: int = 5, seed: int = 0, n_se: float = N_SE) -> list[BoundCheck]:
    """Estimated Psi constants of stationary samples against the transferred constants."""
    _refuse_heavy(noise)
    if spec.k_bar is None and spec.k_lip is None and spec.k_bar_psi1 is None:
        raise MissingConstantError("need k_bar, k_bar_psi1 or k_lip for concentration checks")
    x = _deviations(samples, spec.theta_star)
    r = np.sqrt((x * x).sum(1))
    out = []
    s = math.sqrt(beta / spec.mu)
    if spec.k_bar is not None:
        e = est.estimate_psi2_tilde(r, label="||theta - theta*||")
        out.append(BoundCheck("norm_subgaussian_transfer", e.constant, spec.k_bar * math.sqrt(8) * s, e.mc_error,
                              n_se * e.mc_error, estimate=e))
    if spec.k_bar_psi1 is not None:
        e = est.estimate_psi1_tilde(r, label="||theta - theta*||")
        flags = [] if beta <= 1 / (2 * spec.mu) else ["step_size_above_1/(2mu)"]
        out.append(BoundCheck("norm_subexp_transfer", e.constant, 2 * spec.k_bar_psi1 * s, e.mc_error,
                              n_se * e.mc_error, estimate=e, flags=flags, informative=not flags))
    if spec.k_lip is not None:
        bound = spec.k_lip * s
        funcs = [(f"u{i}", x @ u) for i, u in enumerate(probe_directions(spec.dim, n_directions, seed))]
        funcs.append(("norm", r))
        for name, vals in funcs:
            e = est.estimate_psi2(vals, label=name)
            out.append(BoundCheck(f"lipschitz_subgaussian_transfer@{name}", e.constant, bound, e.mc_error,
                                  n_se * e.mc_error, estimate=e, flags=[FLAG_FINITE_FAMILY],
                                  notes="checked on a finite family of 1-Lipschitz functionals",
                                  seeds={"direction_seed": seed}))
    return out


def check_sqrt_beta_scaling(betas: Sequence[float], constants: Sequence[float], label: str = "",
                            lo: float = 0.4, hi: float = 0.6) -> BoundCheck:
    if len(betas) < 2:
        raise ValueError("need at least two step sizes for a scaling fit")
    fit = est.ols_fit(np.log(betas), np.log(constants))
    cid = "sqrt_beta_scaling" + (f"@{label}" if label else "")
    return BoundCheck(cid, fit["slope"], hi, fit["slope_se"], 0.0, relation="in", lower=lo,
                      data={"fit": fit, "betas": list(map(float, betas)), "constants": list(map(float, constants))})


def check_quantile_bounds(values, constant: float, delta_grid: Sequence[float], family: str = "psi2_tilde",
                          n_se: float = N_SE) -> list[BoundCheck]:
    """Exceedance of the quantile radius implied by a Psi-tilde constant (1 - delta reading)."""
    v = np.abs(np.asarray(values, dtype=float).reshape(-1))
    out = []
    for d in delta_grid:
        if family == "psi2_tilde":
            radius, cid = constant * math.sqrt(math.log(math.e / d)), "quantile_subgaussian"
        else:
            radius, cid = 2 * math.e * constant * math.log(2 / d), "quantile_subexp"
        freq = float((v > radius).mean())
        se = binomial_se(d, v.size)
        out.append(BoundCheck(f"{cid}@delta={d:g}", freq, d, se, n_se * se, flags=["one_minus_delta_reading"],
                              data={"radius": radius}))
    return out


# ---------------------------------------------------------------- finite moments


def check_finite_moments(samples, spec: ProblemSpec, beta: float, K: float, j: int, *,
                         tail_index: float | None = None, tolerance: float = 0.10) -> list[BoundCheck]:
    """M_j must be stable across nested sample sizes n/4, n/2, n.

    With ``tail_index`` (noise moments finite below it) the first infinite order
    q is reported qualitatively: the share of the largest term in sum |x|^q
    stays bounded away from zero when E|x|^q is infinite.
    """
    x = _deviations(samples, spec.theta_star)
    r = np.sqrt((x * x).sum(1))
    n = r.size
    sizes = [n // 4, n // 2, n]
    thr = spec.mu / (j * (spec.mu**2 + K**2))
    flags = [] if beta <= thr else ["step_size_outside_finite_moment_condition"]
    mj = [est.estimate_moments(r[:m], None, j)[j] for m in sizes]
    change = max(abs(b / a - 1) if a > 0 else 0.0 for a, b in zip(mj[:-1], mj[1:]))
    out = [BoundCheck(f"finite_moments_stability@j={j}", change, tolerance, flags=flags,
                      data={"sizes": sizes, "M_j": mj, "step_threshold": thr})]
    if tail_index is not None and math.isfinite(tail_index):
        q = int(math.floor(tail_index)) + 1
        mq = [float(np.mean(r[:m] ** q) ** (1 / q)) for m in sizes]
        growth = max(b / a - 1 for a, b in zip(mq[:-1], mq[1:]))
        terms = r**q
        share = float(terms.max() / terms.sum())
        verdict = "diverging" if (growth > 0.25 or share > 0.05) else "not visibly diverging at this n"
        out.append(BoundCheck(f"heavy_moment_divergence@q={q}", share, 0.05, relation="info",
                              notes=f"M_{q}: {verdict}; growth per doubling {growth:.3f}",
                              data={"sizes": sizes, "M_q": mq, "growth": growth, "max_term_share": share}))
    return out


# ---------------------------------------------------------------- coupling


def coupling_ratios(sq: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-step ratio of mean squared distances and its delta-method standard error."""
    a = sq[:-1]
    b = sq[1:]
    n = sq.shape[1]
    ma = a.mean(1)
    mb = b.mean(1)
    valid = ma > 0
    r = np.where(valid, mb / np.where(valid, ma, 1.0), np.nan)
    resid = b - r[:, None] * a
    se = np.where(valid, resid.std(1, ddof=1) / (math.sqrt(n) * np.where(valid, ma, 1.0)), np.nan)
    return r, se, valid


def check_coupling_contraction(run: engine.CouplingRun, spec: ProblemSpec, beta: float, *,
                               exact_factor: bool | None = None, n_se: float = N_SE) -> list[BoundCheck]:
    """Per-step and geometric contraction of synchronously coupled chains."""
    factor = contraction_factor(spec, beta) ** 2
    sq = run.sq_dists
    r, se, valid = coupling_ratios(sq)
    seeds = {"master_seed": run.master_seed, "n_pairs": run.n_pairs}
    if not valid.any():
        return [BoundCheck("coupling_contraction", 0.0, factor, relation="info", informative=False,
                           flags=["degenerate_coupling"], notes="all coupled distances are zero", seeds=seeds)]
    allow = n_se * se + ROUNDING_FLOOR * np.maximum(r, 1.0)
    excess = np.where(valid, r - factor - allow, -np.inf)
    worst = int(np.argmax(excess))
    ok = bool(np.all(excess[valid] <= 0))
    per_step = {"ratio": r.tolist(), "stderr": se.tolist()}
    worst_check = BoundCheck("coupling_contraction", r[worst], factor, se[worst], allow[worst], seeds=seeds,
                             notes=f"worst step {worst}; all steps checked", data=per_step)
    if worst_check.passed != ok:
        raise AssertionError("inconsistent per-step decision")
    out = [worst_check]
    last = int(np.max(np.nonzero(valid)[0])) + 1
    if sq[0].mean() > 0 and sq[last].mean() > 0:
        g = (sq[last].mean() / sq[0].mean()) ** (1 / last)
        se_g = g * math.sqrt(float((sq[last] / sq[last].mean() - sq[0] / sq[0].mean()).var(ddof=1))
                             / run.n_pairs) / last
        out.append(BoundCheck("coupling_contraction_geometric", g, factor, se_g,
                              n_se * se_g + ROUNDING_FLOOR, seeds=seeds, data={"steps": last}))
    if exact_factor is None:
        exact_factor = (spec.linear and spec.l_w == 0
                        and np.allclose(spec.sigma_matrix, spec.mu * np.eye(spec.dim), rtol=1e-14, atol=0))
    if exact_factor:
        target = (1 - beta * spec.mu) ** 2
        z = np.where(valid, np.abs(r - target) - allow, -np.inf)
        w = int(np.argmax(z))
        out.append(BoundCheck("coupling_exact_factor", r[w], target, se[w], allow[w], relation="eq", seeds=seeds,
                              notes=f"worst step {w}"))
    return out


# ---------------------------------------------------------------- total variation


def tv_curve_analytic(oracle: orc.OracleSolution, theta0, times: Sequence[int], init_var: float | None = None):
    if oracle.dim != 1:
        raise DomainError("analytic TV curve is one-dimensional")
    v = float(oracle.stat_cov[0, 0])
    m = float(oracle.stat_mean[0])
    out = []
    for t in times:
        mt, ct = orc.ar1_marginal_law(oracle, theta0, int(t), None if init_var is None else [[init_var]])
        if ct[0, 0] <= 0:
            out.append(1.0)
        else:
            out.append(orc.tv_gaussian_1d(float(mt[0]), float(ct[0, 0]), m, v))
    return np.array(out)


def binned_tv(a: np.ndarray, b: np.ndarray, edges: np.ndarray) -> float:
    pa, _ = np.histogram(a, bins=edges)
    pb, _ = np.histogram(b, bins=edges)
    return 0.5 * float(np.abs(pa / a.size - pb / b.size).sum())


def _tv_edges(ref: np.ndarray, bins: int, extra: np.ndarray) -> np.ndarray:
    lo = min(float(ref.min()), float(extra.min()))
    hi = max(float(ref.max()), float(extra.max()))
    inner = np.quantile(ref, np.linspace(0, 1, bins + 1))[1:-1]
    return np.concatenate([[lo - 1e-9], np.unique(inner), [hi + 1e-9]])


def _fit_decay(times, tv, floor: float):
    times = np.asarray(times, dtype=float)
    tv = np.asarray(tv, dtype=float)
    keep = (tv > max(3 * floor, 1e-12)) & (tv < 0.999)
    if keep.sum() < 3:
        return None
    idx = np.nonzero(keep)[0]
    # asymptotic rate: use the later half of the informative range
    idx = idx[len(idx) // 2:] if len(idx) >= 6 else idx
    return est.ols_fit(times[idx], np.log(tv[idx]))


def check_tv_decay(spec: ProblemSpec, noise: NoiseModel, beta: float, theta0, times: Sequence[int],
                   n_replicas: int = 200_000, master_seed: int = 0, *, path: str = "auto", bins: int = 64,
                   threads: int | None = None, slope_tol: float = 0.01, sup_tol: float = 0.03) -> list[BoundCheck]:
    """Geometric TV decay of law(theta_t) towards the stationary law (one-dimensional)."""
    if spec.dim != 1:
        raise DomainError("TV decay check is one-dimensional")
    times = sorted(int(t) for t in times)
    try:
        rho = contraction_factor(spec, beta)
    except MissingConstantError:
        rho = None
    has_oracle = spec.linear and noise.kind is NoiseKind.ADDITIVE_GAUSSIAN
    if path == "auto":
        path = "both" if has_oracle else "binned"
    out = []
    exact = None
    if path in ("analytic", "both"):
        if not has_oracle:
            raise DomainError("analytic TV path needs the linear-Gaussian oracle")
        oc = orc.linear_gaussian_oracle(spec, noise, beta)
        exact = tv_curve_analytic(oc, theta0, times)
        fit = _fit_decay(times, exact, 1e-10)
        data = {"times": times, "tv": exact.tolist(), "fit": fit, "rho_bound": rho}
        if fit is None or rho is None:
            out.append(BoundCheck("tv_geometric_decay", math.nan, math.nan, relation="info", informative=False,
                                  data=data, notes="too few informative times or no rate bound"))
        else:
            out.append(BoundCheck("tv_geometric_decay", fit["slope"], math.log(rho) + slope_tol, data=data,
                                  flags=[FLAG_RHO_CONTRACTION]))
    if path in ("binned", "both"):
        ens = engine.run_ensemble(spec, noise, beta, theta0, times[-1], times, n_replicas, master_seed,
                                  threads=threads)
        ref_seed = (master_seed + 1) % (1 << 63)
        t_ref = int(math.ceil(30 / (beta * spec.mu)))
        ref = engine.run_ensemble(spec, noise, beta, spec.theta_star, t_ref, [t_ref], n_replicas, ref_seed,
                                  threads=threads).at(t_ref)[:, 0]
        allx = np.concatenate([ens.at(t)[:, 0] for t in times])
        edges = _tv_edges(ref, bins, allx)
        half = ref.size // 2
        floor = binned_tv(ref[:half], ref[half:], edges) / math.sqrt(2)
        emp = np.array([binned_tv(ens.at(t)[:, 0], ref, edges) for t in times])
        data = {"times": times, "tv": emp.tolist(), "noise_floor": floor, "bins": bins,
                "reference_horizon": t_ref}
        seeds = {"master_seed": master_seed, "reference_seed": ref_seed, "n_replicas": n_replicas}
        if not np.any(emp > 3 * floor):
            out.append(BoundCheck("tv_binned_decay", math.nan, math.nan, relation="info", informative=False,
                                  data=data, seeds=seeds, notes="TV below the estimator noise floor at all times"))
        elif exact is not None:
            gap = np.abs(emp - exact)
            w = int(np.argmax(gap))
            out.append(BoundCheck("tv_binned_agreement", gap[w], 0.0, floor, sup_tol, relation="eq",
                                  data={**data, "exact": exact.tolist()}, seeds=seeds,
                                  notes=f"sup-norm gap at t={times[w]}"))
        else:
            fit = _fit_decay(times, emp, floor)
            if fit is None or rho is None:
                out.append(BoundCheck("tv_binned_decay", math.nan, math.nan, relation="info", informative=False,
                                      data={**data, "fit": fit}, seeds=seeds))
            else:
                out.append(BoundCheck("tv_binned_decay", fit["slope"], math.log(rho) + slope_tol, fit["slope_se"],
                                      N_SE * fit["slope_se"], data={**data, "fit": fit}, seeds=seeds,
                                      flags=[FLAG_RHO_CONTRACTION]))
    return out


# ---------------------------------------------------------------- drift


def check_drift_condition(before, after, spec: ProblemSpec, beta: float, n_bins: int = 20,
                          n_se: float = N_SE) -> list[BoundCheck]:
    """Binned regression of V(theta_{t+1}) on V(theta_t), V = 1 + ||theta - theta*||^2."""
    x0 = _deviations(before, spec.theta_star)
    x1 = _deviations(after, spec.theta_star)
    v0 = 1 + (x0 * x0).sum(1)
    v1 = 1 + (x1 * x1).sum(1)
    edges = np.quantile(v0, np.linspace(0, 1, n_bins + 1))
    idx = np.clip(np.searchsorted(edges, v0, side="right") - 1, 0, n_bins - 1)
    xs, ys, ws = [], [], []
    for b in range(n_bins):
        m = idx == b
        if m.sum() < 10:
            continue
        xs.append(v0[m].mean())
        ys.append(v1[m].mean())
        ws.append(m.sum() / max(v1[m].var(ddof=1), 1e-300))
    fit = est.ols_fit(xs, ys, ws)
    lam = (1 - beta * spec.mu) ** 2 + beta**2 * spec.l_sigma
    b_bound = beta**2 * spec.sigma_sq + 1 - fit["slope"]
    se_b = fit["slope_se_known_var"]
    se_a = fit["intercept_se_known_var"]
    return [
        BoundCheck("drift_condition@slope", fit["slope"], lam, se_b, n_se * se_b, data={"fit": fit}),
        BoundCheck("drift_condition@intercept", fit["intercept"], b_bound, se_a, n_se * se_a, data={"fit": fit},
                   notes="intercept bound uses the fitted slope"),
    ]


# ---------------------------------------------------------------- last iterate


def last_iterate_radii(spec: ProblemSpec, beta: float, delta: float) -> dict[str, float | None]:
    s = beta / spec.mu
    lg = math.log(1 / delta)
    out: dict[str, float | None] = {
        "last_iterate_subgaussian_norm": None,
        "last_iterate_subexp_norm": None,
        "last_iterate_dimension_free_subgaussian": None,
        "last_iterate_dimension_free_subexp": None,
    }
    if spec.k_bar is not None:
        out["last_iterate_subgaussian_norm"] = spec.k_bar * math.sqrt(8 * s * math.log(math.e / delta))
    if spec.k_bar_psi1 is not None:
        out["last_iterate_subexp_norm"] = 4 * math.e * spec.k_bar_psi1 * math.log(2 / delta) * math.sqrt(s)
    if spec.k_lip is not None:
        base = math.sqrt(s * spec.sigma_sq)
        out["last_iterate_dimension_free_subgaussian"] = base + 2 * spec.k_lip * math.sqrt(s * lg)
        out["last_iterate_dimension_free_subexp"] = base + 2 * spec.k_lip * max(math.sqrt(s * lg), beta * lg)
    return out


def ergodic_remainder(spec: ProblemSpec, beta: float, T: int, theta0=None, init_sq: float | None = None,
                      M: float = 1.0) -> tuple[float, list[str]]:
    """rho^T M (1 + ||theta_0 - theta*||^2) with rho from the contraction bound and M := 1."""
    if spec.l_w is None:
        return 0.0, [FLAG_NO_REMAINDER]
    rho = contraction_factor(spec, beta)
    if init_sq is None:
        init_sq = 0.0 if theta0 is None else float(np.sum((np.asarray(theta0) - spec.theta_star) ** 2))
    return rho**T * M * (1 + init_sq), [FLAG_RHO_CONTRACTION, FLAG_M_ONE]


def check_last_iterate_deviation(samples, spec: ProblemSpec, beta: float, delta_grid: Sequence[float], *, T: int,
                                 theta0=None, init_sq: float | None = None, forms: Sequence[str] | None = None,
                                 n_se: float = N_SE, seeds: dict | None = None) -> list[BoundCheck]:
    """Exceedance frequency of ||theta_T - theta*|| over each deviation radius."""
    x = _deviations(samples, spec.theta_star)
    r = np.sqrt((x * x).sum(1))
    n = r.size
    if min(delta_grid) <= 0 or max(delta_grid) >= 1:
        raise ValueError("delta values must lie in (0, 1)")
    if n < 30 / min(delta_grid):
        raise InsufficientReplicasError(f"need at least {math.ceil(30 / min(delta_grid))} replicas, got {n}")
    rem, flags = ergodic_remainder(spec, beta, T, theta0, init_sq)
    step = validate_step_size(spec, beta)
    out = []
    for d in delta_grid:
        for cid, radius in last_iterate_radii(spec, beta, d).items():
            if radius is None or (forms is not None and cid not in forms):
                continue
            extra = list(flags)
            if "dimension_free" in cid and not step["dimension_free_last_iterate"].admissible:
                extra.append("step_size_outside_dimension_free_condition")
            if "subexp" in cid and cid.endswith("dimension_free_subexp"):
                extra.append("psi1_constant_taken_equal_to_psi2_constant")
            freq = float((r > radius).mean())
            se = binomial_se(d, n)
            out.append(BoundCheck(f"{cid}@delta={d:g}", freq, d, se, n_se * se + rem, flags=extra,
                                  data={"radius": radius, "remainder": rem}, seeds=seeds or {}))
    return out


# ---------------------------------------------------------------- covariance decay


def check_covariance_decay(window, spec: ProblemSpec, beta: float, lags: Sequence[int], *,
                           oracle: orc.OracleSolution | None = None, w2_sq: float = 0.0,
                           n_se: float = N_SE) -> list[BoundCheck]:
    """Lagged inner products of a stationary window of shape (W, R, d).

    For lag k every pair (i, i + k) inside the window is used; standard errors
    come from per-replica averages, which are independent.
    """
    if not spec.linear:
        raise DomainError("covariance decay needs a linear gradient")
    x = np.asarray(window, dtype=float) - spec.theta_star
    W, R, _ = x.shape
    if max(lags) >= W:
        raise ValueError("lags must be shorter than the window")
    var_pi = float(np.trace(oracle.stat_cov)) if oracle is not None else variance_bound(spec, beta)
    alpha = 1 - beta * spec.mu
    per = []
    for k in lags:
        prods = (x[: W - k] * x[k:]).sum(-1).mean(0)
        c = float(prods.mean())
        se = float(prods.std(ddof=1) / math.sqrt(R))
        bound = 2 * alpha**k * (w2_sq + var_pi)
        exact = oracle.autocov_trace(k) if oracle is not None else None
        per.append({"lag": int(k), "empirical": c, "stderr": se, "bound": bound, "exact": exact})
    flags = [] if w2_sq else ["stationary_start_w2_term_zero"]
    data = {"per_lag": per, "var_pi_source": "oracle" if oracle is not None else "variance_bound"}
    worst = max(per, key=lambda p: p["empirical"] - p["bound"] - n_se * p["stderr"])
    out = [BoundCheck("covariance_decay_bound", worst["empirical"], worst["bound"], worst["stderr"],
                      n_se * worst["stderr"], flags=flags, data=data, notes=f"worst lag {worst['lag']}")]
    if oracle is not None:
        w = max(per, key=lambda p: abs(p["empirical"] - p["exact"]) - n_se * p["stderr"])
        out.append(BoundCheck("covariance_decay_exact", w["empirical"], w["exact"], w["stderr"],
                              n_se * w["stderr"] + ROUNDING_FLOOR, relation="eq", data=data,
                              notes=f"worst lag {w['lag']}"))
    return out


# ---------------------------------------------------------------- trajectory functionals


def trajectory_constant(spec: ProblemSpec, beta: float, n: int) -> float:
    if spec.k_lip is None:
        raise MissingConstantError("trajectory concentration needs k_lip")
    cw = 1 / (1 - contraction_factor(spec, beta))
    return spec.k_lip * cw * math.sqrt(beta / spec.mu + (n - 1) * beta**2)


def check_trajectory_lipschitz_concentration(window_average, spec: ProblemSpec, beta: float, n: int,
                                             f_kind: str = "sum", *, direction=None,
                                             n_se: float = N_SE) -> BoundCheck:
    """Psi2 constant of f(theta_1..theta_n) - E f across stationary replicas.

    ``window_average`` holds each replica's average of theta over the window;
    f is either sum_i <u, theta_i> or ||sum_i theta_i - n theta*||.
    """
    avg = np.asarray(window_average, dtype=float)
    if f_kind == "sum":
        u = np.zeros(spec.dim)
        u[0] = 1.0
        if direction is not None:
            u = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
        vals = n * (avg @ u)
    elif f_kind == "norm_of_sum":
        vals = n * np.linalg.norm(avg - spec.theta_star, axis=1)
    else:
        raise ValueError(f"unknown f_kind {f_kind!r}")
    e = est.estimate_psi2(vals, label=f"{f_kind}, n={n}")
    bound = trajectory_constant(spec, beta, n)
    return BoundCheck(f"trajectory_lipschitz_concentration@{f_kind},n={n}", e.constant, bound, e.mc_error,
                      n_se * e.mc_error, estimate=e, flags=[FLAG_FINITE_FAMILY])


# ---------------------------------------------------------------- tail averages


def pr_radius(spec: ProblemSpec, beta: float, n0: int, n: int, delta: float, w2_sq: float,
              subexp: bool = False) -> float:
    if spec.k_lip is None:
        raise MissingConstantError("tail-average radius needs k_lip")
    alpha = 1 - beta * spec.mu
    aw = contraction_factor(spec, beta)
    first = math.sqrt((2 / n) * ((1 + alpha) / (1 - alpha)) * (aw**n0 * w2_sq + beta * spec.sigma_sq / spec.mu))
    lg = math.log(1 / delta)
    dev = math.sqrt(beta * spec.mu + 1 / n) * math.sqrt(lg / n)
    if subexp:
        dev = max(dev, lg / n)
    return first + 2 * spec.k_lip * math.sqrt(beta / spec.mu) / (1 - aw) * dev


def upsilon(spec: ProblemSpec, beta: float, n0: int, density_ratio_sup: float, M: float = 1.0) -> float:
    return 1 + M * contraction_factor(spec, beta) ** n0 * density_ratio_sup


def check_pr_average_bound(window_average, spec: ProblemSpec, beta: float, n0: int, n: int,
                           delta_grid: Sequence[float], *, w2_sq: float, density_ratio_sup: float,
                           oracle_law: tuple[np.ndarray, np.ndarray] | None = None, subexp: bool = False,
                           rms_tol: float = 0.05, n_se: float = N_SE) -> list[BoundCheck]:
    """Tail-average deviation radius, and the RMS error against the exact law when available."""
    if not spec.linear:
        raise DomainError("tail-average bound needs a linear gradient")
    if not math.isfinite(density_ratio_sup):
        raise DomainError("initial law is not absolutely continuous with bounded density w.r.t. the stationary law")
    err = np.linalg.norm(np.asarray(window_average, dtype=float) - spec.theta_star, axis=1)
    R = err.size
    ups = upsilon(spec, beta, n0, density_ratio_sup)
    out = []
    for d in delta_grid:
        radius = pr_radius(spec, beta, n0, n, d, w2_sq, subexp)
        freq = float((err > radius).mean())
        level = min(ups * d, 1.0)
        se = binomial_se(level, R)
        out.append(BoundCheck(f"tail_average_deviation@n={n},delta={d:g}", freq, level, se, n_se * se,
                              flags=[FLAG_M_ONE, FLAG_RHO_CONTRACTION],
                              data={"radius": radius, "upsilon": ups, "w2_sq": w2_sq}))
    if oracle_law is not None:
        mean, cov = oracle_law
        exact = math.sqrt(float(np.trace(cov)) + float(np.sum((mean - spec.theta_star) ** 2)))
        rms = math.sqrt(float(np.mean(err**2)))
        se = float(np.std(err**2, ddof=1) / math.sqrt(R)) / (2 * rms) if rms > 0 else 0.0
        out.append(BoundCheck(f"tail_average_rms_oracle@n={n}", rms / exact, 1.0, se / exact, rms_tol,
                              relation="eq", data={"rms": rms, "exact_rms": exact}))
    return out


def check_pr_average_rate(ns: Sequence[int], rms: Sequence[float], lo: float = -0.55,
                          hi: float = -0.45) -> BoundCheck:
    fit = est.ols_fit(np.log(ns), np.log(rms))
    return BoundCheck("tail_average_rate", fit["slope"], hi, fit["slope_se"], 0.0, relation="in", lower=lo,
                      data={"fit": fit, "n": list(map(int, ns)), "rms": list(map(float, rms))})


# ---------------------------------------------------------------- matrix concentration


def phi(x: float) -> float:
    return max(x, math.sqrt(x))


def operator_norm(m: np.ndarray) -> np.ndarray:
    """Spectral norm of symmetric matrices of shape (..., d, d)."""
    return np.abs(np.linalg.eigvalsh(np.asarray(m, dtype=float))).max(axis=-1)


def check_matrix_concentration(generator: Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]],
                               k_xi_mat: float, k_xi_vec: float, N_grid: Sequence[int], d: int, delta: float, *,
                               trials: int | None = None, master_seed: int = 0,
                               n_se: float = N_SE) -> list[BoundCheck]:
    """Exceedance of the averaged-matrix and averaged-vector radii over independent trials.

    ``generator(rng, N)`` returns (Xi of shape (N, d, d), xi of shape (N, d)).
    """
    from .. import rng as rngmod

    trials = int(math.ceil(50 / delta)) if trials is None else int(trials)
    if trials < 50 / delta:
        raise InsufficientReplicasError(f"need at least {math.ceil(50 / delta)} trials")
    out = []
    for N in N_grid:
        mats = np.empty((trials, d, d))
        vecs = np.empty((trials, d))
        for i in range(trials):
            gen = rngmod.stream(rngmod.replica_seed(master_seed, i), channel=rngmod.NOISE)
            big, small = generator(gen, int(N))
            mats[i] = big.mean(0)
            vecs[i] = small.mean(0)
        mnorm = operator_norm(mats)
        vnorm = np.linalg.norm(vecs, axis=1)
        rm = 3 * k_xi_mat * phi((math.log(2 / delta) + 3 * d) / N)
        rv = 4 * k_xi_vec * phi((math.log(2 / delta) + 2 * d) / N)
        se = binomial_se(delta, trials)
        seeds = {"master_seed": master_seed, "trials": trials}
        fm = float((mnorm > rm).mean())
        fv = float((vnorm > rv).mean())
        out.append(BoundCheck(f"matrix_average_concentration@N={N}", fm, delta, se, n_se * se, seeds=seeds,
                              data={"radius": rm, "mean_norm": float(mnorm.mean())}))
        out.append(BoundCheck(f"vector_average_concentration@N={N}", fv, delta, se, n_se * se, seeds=seeds,
                              data={"radius": rv, "mean_norm": float(vnorm.mean())}))
    return out


def random_design_generator(design_cov, label_std: float, bounded: bool = False):
    """(Xi, xi) = (X X^T - D, -label_std * w * X) for the random-design noise."""
    from ..model import psd_sqrt, SQRT3

    dcov = np.atleast_2d(np.asarray(design_cov, dtype=float))
    root = psd_sqrt(dcov)
    d = dcov.shape[0]

    def gen(g: np.random.Generator, N: int):
        z = g.uniform(-SQRT3, SQRT3, (N, d)) if bounded else g.standard_normal((N, d))
        x = z @ root
        w = g.standard_normal(N)
        return x[:, :, None] * x[:, None, :] - dcov, -label_std * w[:, None] * x

    return gen


# ---------------------------------------------------------------- minibatch


def check_minibatch_boundedness(max_deviation, radius: float, delta: float, *, admissible: bool = True,
                                n_se: float = N_SE, seeds: dict | None = None) -> BoundCheck:
    m = np.asarray(max_deviation, dtype=float)
    freq = float((m > radius).mean())
    se = binomial_se(delta, m.size)
    flags = [] if admissible else ["minibatch_conditions_not_met"]
    return BoundCheck("minibatch_boundedness", freq, delta, se, n_se * se, flags=flags, seeds=seeds or {},
                      data={"radius": radius, "max_deviation_quantile_0.99": float(np.quantile(m, 0.99))})


# ---------------------------------------------------------------- burn-in and exact properties


def attest_burn_in(half, full, claim_suffix: str = "") -> BoundCheck:
    """z-scores of the change in snapshot mean and variance between T/2 and T."""
    a = np.asarray(half, dtype=float)
    b = np.asarray(full, dtype=float)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    n = a.shape[0]
    zs = []
    for j in range(a.shape[1]):
        se_m = math.sqrt((a[:, j].var(ddof=1) + b[:, j].var(ddof=1)) / n)
        zs.append(abs(a[:, j].mean() - b[:, j].mean()) / se_m if se_m > 0 else 0.0)
        ca = (a[:, j] - a[:, j].mean()) ** 2
        cb = (b[:, j] - b[:, j].mean()) ** 2
        se_v = math.sqrt((ca.var(ddof=1) + cb.var(ddof=1)) / n)
        zs.append(abs(ca.mean() - cb.mean()) / se_v if se_v > 0 else 0.0)
    z = max(zs)
    attested = z < 2
    return BoundCheck("burn_in" + (f"@{claim_suffix}" if claim_suffix else ""), z, 2.0, relation="info",
                      flags=[] if attested else ["stationarity_not_attested"],
                      notes="attested" if attested else "snapshot moments still moving")


def check_gradient_step_contraction(spec: ProblemSpec, beta: float, n_pairs: int = 1000, seed: int = 0,
                                    tol: float | None = None) -> BoundCheck:
    """max ||g(theta) - g(theta')|| / ((1 - beta mu) ||theta - theta'||) over random pairs."""
    if beta > 2 / (spec.mu + spec.big_l):
        raise ValueError("step size exceeds 2/(mu + L)")
    gen = np.random.Generator(np.random.Philox(key=[seed, 0x6A]))
    d = spec.dim
    if spec.ball_radius is not None:
        u = gen.standard_normal((2 * n_pairs, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = spec.ball_radius * gen.random((2 * n_pairs, 1)) ** (1 / d)
        pts = u * r
    else:
        pts = spec.theta_star + gen.standard_normal((2 * n_pairs, d)) * 3
    a, b = pts[:n_pairs], pts[n_pairs:]
    ga = a - beta * gradient(spec, a)
    gb = b - beta * gradient(spec, b)
    ratio = np.linalg.norm(ga - gb, axis=1) / ((1 - beta * spec.mu) * np.linalg.norm(a - b, axis=1))
    if tol is None:
        tol = 1e-12 if spec.linear else 1e-8
    return BoundCheck("gradient_step_contraction", float(ratio.max()), 1.0, allowance=tol,
                      seeds={"seed": seed, "pairs": n_pairs})


def check_geometric_sum(n_instances: int = 1000, seed: int = 0, n_max: int = 200) -> BoundCheck:
    gen = np.random.Generator(np.random.Philox(key=[seed, 0x8]))
    worst = -math.inf
    for _ in range(n_instances):
        c = float(gen.uniform(0.01, 10))
        a = float(gen.uniform(0.001, 0.999))
        n = int(gen.integers(1, n_max + 1))
        direct = geometric_double_sum(c, a, n)
        worst = max(worst, (direct - geometric_sum_bound(c, a, n)) / direct)
    return BoundCheck("geometric_sum_bound", worst, 0.0, allowance=1e-12, notes="max relative excess of direct sum",
                      seeds={"seed": seed, "instances": n_instances})


def check_trinomial(p_max: int = 12) -> BoundCheck:
    bad = 0
    total = 0
    for p in range(1, p_max + 1):
        for l in range(2, 2 * p + 1):
            lhs, rhs = trinomial_identity(p, l)
            total += 1
            bad += lhs != rhs
    return BoundCheck("trinomial_identity", bad, 0.0, relation="eq", notes=f"{total} exact integer cases")
