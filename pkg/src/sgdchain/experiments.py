"""Experiment orchestration: one runner per experiment kind.

Every component draws its randomness from ``rng.derive(master_seed, tag)``, so
components are independent of one another and of the thread count.  Nothing
that depends on wall-clock time, threads or paths enters the report.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Callable

import numpy as np

from . import engine, oracle as orc, rng as rngmod
from .config import ExperimentConfig
from .diagnostics import checks as ck, estimators as est
from .diagnostics.report import DiagnosticsReport
from .model import (
    DomainError,
    NoiseKind,
    NoiseModel,
    ProblemSpec,
    minibatch_conditions,
    random_design_psi1_constants,
    spec_id,
)

log = logging.getLogger("sgdchain")

STATIONARY_HORIZON = 15.0  # burn-in from theta* in units of 1/(beta mu)
COVARIANCE_LAGS = tuple(range(21))
TRAJECTORY_N = (1, 10, 50)
TRAJECTORY_REPLICAS = 20_000
SCALING_SAMPLES = 20_000
DRIFT_REPLICAS = 100_000


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class Context:
    cfg: ExperimentConfig
    spec: ProblemSpec
    noise: NoiseModel
    threads: int | None = None
    force: bool = False
    report: DiagnosticsReport | None = None
    artifacts: list[tuple[str, Callable[[Path], None]]] = field(default_factory=list)
    seeds: dict[str, int] = field(default_factory=dict)

    def seed(self, tag: str) -> int:
        s = rngmod.derive(self.cfg.master_seed, tag)
        self.seeds[tag] = s
        return s

    @property
    def has_oracle(self) -> bool:
        return self.spec.linear and self.noise.kind is NoiseKind.ADDITIVE_GAUSSIAN

    def oracle(self, beta: float) -> orc.OracleSolution | None:
        return orc.linear_gaussian_oracle(self.spec, self.noise, beta) if self.has_oracle else None

    def burn_in(self, beta: float) -> int:
        return int(math.ceil(STATIONARY_HORIZON / (beta * self.spec.mu)))

    def ensemble(self, beta, init, T, times, R, tag, **kw) -> engine.Ensemble:
        log.info("%s: %d replicas x %d steps", tag, R, T)
        return engine.run_ensemble(self.spec, self.noise, beta, init, T, times, R, self.seed(tag),
                                   threads=self.threads, force=self.force, **kw)

    def add(self, checks) -> None:
        self.report.add(checks)


# ---------------------------------------------------------------- CSV helpers


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def _curve_writer(header, columns):
    cols = [list(map(lambda v: v if isinstance(v, (int, str)) else float(v), c)) for c in columns]
    return lambda p: _write_rows(p, header, zip(*cols))


def _matrix_writer(header, array):
    arr = np.asarray(array, dtype=float)
    return lambda p: _write_rows(p, header, ([i] + [float(v) for v in row] for i, row in enumerate(arr)))


# ---------------------------------------------------------------- components


def stationary_component(ctx: Context, beta: float, T: int | None = None) -> engine.Ensemble:
    """Moments, bias, concentration transfer, quantiles and burn-in at one step size."""
    cfg, spec, noise = ctx.cfg, ctx.spec, ctx.noise
    T = int(cfg.T if T is None else T)
    times = cfg.snapshot_times or [T // 2, T]
    times = sorted(set(int(t) for t in times) | {T // 2, T})
    start = np.asarray(cfg.theta0, dtype=float) if cfg.theta0 is not None else spec.theta_star
    ens = ctx.ensemble(beta, start, T, times, cfg.n_replicas, "stationary")
    x = ens.at(T)
    ctx.add(ck.attest_burn_in(ens.at(T // 2), x))
    ctx.add(ck.check_variance_bias_bounds(x, spec, beta))
    oc = ctx.oracle(beta)
    if oc is not None:
        v = float(np.trace(oc.stat_cov))
        sq = ((x - spec.theta_star) ** 2).sum(1)
        se = float(sq.std(ddof=1) / math.sqrt(sq.size))
        ctx.report.fits["stationary_trace_variance_oracle"] = v
        ctx.add(ck.BoundCheck("stationary_variance_bound@oracle", float(sq.mean()), v, se, 0.03 * v,
                              relation="eq", notes="second moment against the Lyapunov fixed point (3% tolerance)"))
    heavy = noise.kind is NoiseKind.ADDITIVE_STUDENT_T
    lp = math.sqrt(spec.l_sigma)
    if heavy:
        ctx.add(ck.check_finite_moments(x, spec, beta, lp, 4, tail_index=noise.df))
    else:
        ctx.add(ck.check_finite_moments(x, spec, beta, lp, 8))
        n_dir = 1 if spec.dim == 1 else 5
        conc = ck.check_concentration_transfer(x, spec, beta, noise=noise, n_directions=n_dir,
                                               seed=ctx.seed("directions"))
        ctx.add(conc)
        for c in conc:
            if c.claim_id == "norm_subgaussian_transfer":
                r = np.linalg.norm(x - spec.theta_star, axis=1)
                ctx.add(ck.check_quantile_bounds(r, c.empirical, cfg.delta_grid or [0.05], "psi2_tilde"))
            if c.claim_id == "norm_subexp_transfer":
                r = np.linalg.norm(x - spec.theta_star, axis=1)
                ctx.add(ck.check_quantile_bounds(r, c.empirical, cfg.delta_grid or [0.05], "psi1_tilde"))
    ctx.artifacts.append(("stationary_snapshots.csv", lambda p: engine.write_ensemble_csv(ens, p)))
    return ens


def drift_component(ctx: Context, beta: float) -> None:
    """One-step regression of V(theta_1) on V(theta_0) from a spread-out start."""
    spec = ctx.spec
    scale = 4 * max(ck.variance_bound(spec, beta), 1e-3) / spec.dim
    init = engine.GaussianInit(spec.theta_star, scale * np.eye(spec.dim))
    R = min(ctx.cfg.n_replicas or DRIFT_REPLICAS, DRIFT_REPLICAS)
    ens = ctx.ensemble(beta, init, 1, [0, 1], R, "drift")
    ctx.add(ck.check_drift_condition(ens.at(0), ens.at(1), spec, beta))


def covariance_component(ctx: Context, beta: float) -> None:
    """Autocovariance of a stationary window at lags 0..20."""
    if not ctx.spec.linear:
        log.info("covariance decay skipped: gradient is not linear")
        return
    tb = ctx.burn_in(beta)
    lags = COVARIANCE_LAGS
    times = list(range(tb, tb + len(lags)))
    R = min(ctx.cfg.n_replicas, 100_000)
    ens = ctx.ensemble(beta, ctx.spec.theta_star, times[-1], times, R, "covariance")
    checks = ck.check_covariance_decay(ens.stack(times), ctx.spec, beta, lags, oracle=ctx.oracle(beta))
    ctx.add(checks)
    per = checks[0].data["per_lag"]
    ctx.artifacts.append(("autocovariance.csv", _curve_writer(
        ["lag", "empirical", "stderr", "bound", "exact"],
        [[p["lag"] for p in per], [p["empirical"] for p in per], [p["stderr"] for p in per],
         [p["bound"] for p in per], [math.nan if p["exact"] is None else p["exact"] for p in per]])))


def _init_from(ctx: Context, block: dict | None, default):
    if block is None:
        return default
    if isinstance(block, list):
        return np.asarray(block, dtype=float)
    kind = block.get("kind", "point")
    if kind == "point":
        return np.asarray(block["theta0"], dtype=float)
    if kind == "gaussian":
        mean = np.asarray(block.get("mean", ctx.spec.theta_star), dtype=float)
        return engine.GaussianInit(mean, np.atleast_2d(np.asarray(block["cov"], dtype=float)))
    raise DomainError(f"unknown init kind {kind!r}")


def coupling_component(ctx: Context, beta: float) -> None:
    spec = ctx.spec
    blk = ctx.cfg.coupling or {}
    one = np.ones(spec.dim) / math.sqrt(spec.dim)
    i1 = _init_from(ctx, blk.get("init1"), spec.theta_star + 2 * one)
    i2 = _init_from(ctx, blk.get("init2"), spec.theta_star - one)
    n_pairs = int(blk.get("n_pairs", 10_000))
    n_steps = int(blk.get("n_steps", 50))
    log.info("coupling: %d pairs x %d steps", n_pairs, n_steps)
    run = engine.run_coupled_pair(spec, ctx.noise, beta, i1, i2, n_steps, n_pairs, ctx.seed("coupling"),
                                  threads=ctx.threads, force=ctx.force)
    ctx.add(ck.check_coupling_contraction(run, spec, beta))
    r, se, _ = ck.coupling_ratios(run.sq_dists)
    ctx.artifacts.append(("coupling_ratios.csv", _curve_writer(
        ["step", "mean_sq_dist", "ratio_next", "stderr"],
        [list(range(run.n_steps + 1)), run.sq_dists.mean(1), list(r) + [math.nan], list(se) + [math.nan]])))
    if blk.get("write_pairs", False):
        ctx.artifacts.append(("coupling_pairs.csv", lambda p: engine.write_coupling_csv(run, p)))


def tv_component(ctx: Context, beta: float) -> None:
    spec = ctx.spec
    if spec.dim != 1:
        log.info("TV decay skipped: dimension %d > 1", spec.dim)
        return
    blk = ctx.cfg.tv or {}
    times = [int(t) for t in blk.get("times", list(range(0, 61, 3)))]
    theta0 = np.asarray(blk.get("theta0", ctx.cfg.theta0 if ctx.cfg.theta0 is not None
                                else spec.theta_star + 5.0), dtype=float)
    R = int(blk.get("n_replicas", 200_000))
    log.info("tv decay: %d replicas, times up to %d", R, max(times))
    checks = ck.check_tv_decay(spec, ctx.noise, beta, theta0, times, R, ctx.seed("tv"),
                               path=blk.get("path", "auto"), bins=int(blk.get("bins", 64)), threads=ctx.threads)
    ctx.add(checks)
    cols = [times]
    header = ["time"]
    for c in checks:
        if "tv" in c.data:
            header.append("tv_" + c.claim_id.split("_")[1])
            cols.append(c.data["tv"])
    ctx.artifacts.append(("tv_curve.csv", _curve_writer(header, cols)))


def last_iterate_component(ctx: Context, beta: float) -> None:
    cfg, spec = ctx.cfg, ctx.spec
    theta0 = cfg.theta_start(spec)
    R = cfg.n_replicas
    ens = ctx.ensemble(beta, theta0, cfg.T, [cfg.T], R, "last_iterate")
    forms = None
    if cfg.kind == "full_suite":
        forms = ("last_iterate_subgaussian_norm", "last_iterate_dimension_free_subgaussian")
    ctx.add(ck.check_last_iterate_deviation(ens.at(cfg.T), spec, beta, cfg.delta_grid, T=cfg.T, theta0=theta0,
                                            forms=forms, seeds={"master_seed": ens.master_seed, "replicas": R}))
    ctx.artifacts.append(("last_iterate.csv", lambda p: engine.write_ensemble_csv(ens, p)))


def _nu(ctx: Context, beta: float):
    """Initial law for the tail-average experiment: Gaussian, underdispersed w.r.t. pi."""
    oc = ctx.oracle(beta)
    if oc is None:
        raise DomainError("tail-average experiment needs the linear-Gaussian oracle (W2 and density ratio)")
    blk = ctx.cfg.init or {}
    scale = float(blk.get("cov_scale", 0.5))
    offset = np.asarray(blk.get("mean_offset", [0.5] * ctx.spec.dim), dtype=float)
    mean = oc.stat_mean + offset
    cov = scale * oc.stat_cov
    return oc, mean, cov


def pr_average_component(ctx: Context, beta: float) -> None:
    cfg, spec = ctx.cfg, ctx.spec
    oc, mean, cov = _nu(ctx, beta)
    n0 = int(cfg.n0 if cfg.n0 is not None else 200)
    ns = sorted(cfg.n or [100, 1000])
    w2_sq = orc.gaussian_w2(mean, cov, oc.stat_mean, oc.stat_cov) ** 2
    ratio = orc.gaussian_density_ratio_sup(mean, cov, oc.stat_mean, oc.stat_cov)
    R = cfg.n_replicas
    ens = ctx.ensemble(beta, engine.GaussianInit(mean, cov), n0 + ns[-1], [], R, "pr_average",
                       windows=[(n0, n) for n in ns])
    rms = []
    for n in ns:
        law = orc.pr_average_law(oc, mean, n0, n, init_cov=cov)
        avg = ens.window_average(n0, n)
        ctx.add(ck.check_pr_average_bound(avg, spec, beta, n0, n, cfg.delta_grid, w2_sq=w2_sq,
                                          density_ratio_sup=ratio, oracle_law=law))
        rms.append(math.sqrt(float(np.mean(np.sum((avg - spec.theta_star) ** 2, axis=1)))))
    if len(ns) >= 2:
        ctx.add(ck.check_pr_average_rate(ns, rms))
    ctx.report.fits["tail_average"] = {"n0": n0, "n": ns, "rms": rms, "w2_sq": w2_sq, "density_ratio_sup": ratio}
    ctx.artifacts.append(("tail_average_rms.csv", _curve_writer(["n", "rms"], [ns, rms])))


def trajectory_component(ctx: Context, beta: float) -> None:
    """Lipschitz functionals of stationary trajectory segments."""
    spec = ctx.spec
    if spec.k_lip is None or spec.l_w is None:
        log.info("trajectory concentration skipped: k_lip or L_W missing")
        return
    blk = ctx.cfg.trajectory or {}
    ns = [int(n) for n in blk.get("n", TRAJECTORY_N)]
    R = int(blk.get("n_replicas", TRAJECTORY_REPLICAS))
    tb = ctx.burn_in(beta)
    ens = ctx.ensemble(beta, spec.theta_star, tb + max(ns), [], R, "trajectory", windows=[(tb, n) for n in ns])
    for n in ns:
        avg = ens.window_average(tb, n)
        ctx.add(ck.check_trajectory_lipschitz_concentration(avg, spec, beta, n, "sum"))
        ctx.add(ck.check_trajectory_lipschitz_concentration(avg, spec, beta, n, "norm_of_sum"))


def scaling_component(ctx: Context, betas: list[float]) -> None:
    """Psi-tilde-2 constant of the stationary norm across step sizes."""
    spec = ctx.spec
    if spec.k_bar is None:
        log.info("scaling law skipped: k_bar missing")
        return
    blk = ctx.cfg.scaling or {}
    R = int(blk.get("n_samples", ctx.cfg.n_replicas if ctx.cfg.kind != "full_suite" else SCALING_SAMPLES))
    consts = []
    rows = []
    for i, b in enumerate(sorted(betas)):
        T = ctx.burn_in(b)
        ens = ctx.ensemble(b, spec.theta_star, T, [T], R, f"scaling[{i}]")
        r = np.linalg.norm(ens.at(T) - spec.theta_star, axis=1)
        e = est.estimate_psi2_tilde(r, label=f"beta={b:g}")
        bound = spec.k_bar * math.sqrt(8 * b / spec.mu)
        ctx.add(ck.BoundCheck(f"norm_subgaussian_transfer@beta={b:g}", e.constant, bound, e.mc_error,
                              ck.N_SE * e.mc_error, estimate=e))
        consts.append(e.constant)
        rows.append((b, e.constant, e.mc_error, bound))
    ctx.add(ck.check_sqrt_beta_scaling(sorted(betas), consts, "psi2_tilde_norm"))
    ctx.artifacts.append(("scaling.csv", _curve_writer(["beta", "constant", "mc_error", "bound"],
                                                       list(map(list, zip(*rows))))))


def exact_component(ctx: Context, beta: float) -> None:
    spec = ctx.spec
    if beta <= 2 / (spec.mu + spec.big_l):
        ctx.add(ck.check_gradient_step_contraction(spec, beta, seed=ctx.seed("gradient_pairs") & 0xFFFFFFFF))
    ctx.add(ck.check_geometric_sum(seed=ctx.seed("geometric") & 0xFFFFFFFF))
    ctx.add(ck.check_trinomial())


def _design(ctx: Context) -> tuple[np.ndarray, float, bool]:
    n = ctx.noise
    if n.kind not in (NoiseKind.RANDOM_DESIGN_GAUSSIAN, NoiseKind.RANDOM_DESIGN_BOUNDED):
        raise DomainError("this experiment needs random-design noise")
    return n.design_cov, float(n.label_std), n.kind is NoiseKind.RANDOM_DESIGN_BOUNDED


def minibatch_component(ctx: Context, beta: float) -> None:
    cfg, spec = ctx.cfg, ctx.spec
    dcov, ls, bounded = _design(ctx)
    blk = cfg.minibatch
    C = float(blk["radius"])
    delta = float(blk["delta"])
    kx, kv = random_design_psi1_constants(dcov, ls)
    if bounded:
        log.info("bounded design: Gaussian-design Psi1 constants used as a conservative proxy")
    rep = minibatch_conditions(spec, beta, cfg.N, cfg.T, delta, C, kx, kv)
    admissible = not rep.failures()
    if not admissible and not ctx.force:
        bad = "; ".join(f"{c.condition_id}: {c.description} (threshold {c.threshold:.6g})" for c in rep.failures())
        raise engine.StepSizeError(f"minibatch configuration is not admissible: {bad}")
    one = np.ones(spec.dim) / math.sqrt(spec.dim)
    start = np.asarray(blk.get("theta0", spec.theta_star + 0.5 * C * one), dtype=float)
    if np.linalg.norm(start - spec.theta_star) > C:
        raise DomainError("minibatch start must lie within the radius of theta*")
    ens = ctx.ensemble(beta, start, cfg.T, [cfg.T], cfg.n_replicas, "minibatch", batch=cfg.N, track_max=True)
    ctx.add(ck.check_minibatch_boundedness(ens.max_deviation, C, delta, admissible=admissible,
                                           seeds={"master_seed": ens.master_seed, "replicas": cfg.n_replicas}))
    ctx.report.fits["minibatch"] = {"K_Xi": kx, "K_xi": kv, "conditions": {
        c.condition_id: {"threshold": c.threshold, "admissible": c.admissible} for c in rep.conditions}}
    ctx.artifacts.append(("minibatch_max_deviation.csv",
                          _matrix_writer(["replica", "max_deviation"], ens.max_deviation[:, None])))


def matrix_component(ctx: Context) -> None:
    dcov, ls, bounded = _design(ctx)
    blk = ctx.cfg.matrix
    kx, kv = random_design_psi1_constants(dcov, ls)
    gen = ck.random_design_generator(dcov, ls, bounded)
    log.info("matrix concentration: N in %s, %s trials", blk["N_grid"], blk["trials"])
    ctx.add(ck.check_matrix_concentration(gen, kx, kv, [int(n) for n in blk["N_grid"]], dcov.shape[0],
                                          float(blk["delta"]), trials=int(blk["trials"]),
                                          master_seed=ctx.seed("matrix")))


# ---------------------------------------------------------------- kinds


def _single_beta(cfg: ExperimentConfig) -> float:
    if cfg.beta is None:
        raise DomainError(f"kind '{cfg.kind}' needs a single beta, not beta_grid")
    return cfg.beta


def _run_stationary(ctx):
    if ctx.cfg.beta_grid is not None:
        scaling_component(ctx, ctx.cfg.beta_grid)
    else:
        b = ctx.cfg.beta
        stationary_component(ctx, b)
        drift_component(ctx, b)


def _run_full(ctx):
    b = _single_beta(ctx.cfg)
    stationary_component(ctx, b)
    drift_component(ctx, b)
    covariance_component(ctx, b)
    if ctx.spec.l_w is not None:
        coupling_component(ctx, b)
    tv_component(ctx, b)
    last_iterate_component(ctx, b)
    if ctx.has_oracle:
        pr_average_component(ctx, b)
    trajectory_component(ctx, b)
    grid = ctx.cfg.beta_grid or (ctx.cfg.scaling or {}).get("betas") or [b / 8, b / 4, b / 2, b]
    scaling_component(ctx, [float(x) for x in grid])
    exact_component(ctx, b)
    if ctx.noise.kind in (NoiseKind.RANDOM_DESIGN_GAUSSIAN, NoiseKind.RANDOM_DESIGN_BOUNDED):
        if ctx.cfg.minibatch is not None and ctx.cfg.N is not None:
            minibatch_component(ctx, b)
        if ctx.cfg.matrix is not None:
            matrix_component(ctx)


RUNNERS: dict[str, Callable[[Context], None]] = {
    "stationary": _run_stationary,
    "tv_decay": lambda ctx: tv_component(ctx, _single_beta(ctx.cfg)),
    "coupling": lambda ctx: coupling_component(ctx, _single_beta(ctx.cfg)),
    "last_iterate": lambda ctx: last_iterate_component(ctx, _single_beta(ctx.cfg)),
    "pr_average": lambda ctx: pr_average_component(ctx, _single_beta(ctx.cfg)),
    "minibatch_boundedness": lambda ctx: minibatch_component(ctx, _single_beta(ctx.cfg)),
    "matrix_concentration": matrix_component,
    "full_suite": _run_full,
}


def build_report(cfg: ExperimentConfig, *, threads: int | None = None,
                 force: bool = False) -> tuple[DiagnosticsReport, list[tuple[str, Callable[[Path], None]]]]:
    """Run the experiment in memory; returns the report and the pending CSV writers."""
    spec, noise = cfg.build_problem()
    report = DiagnosticsReport(spec.summary(), cfg.beta if cfg.beta_grid is None else list(cfg.beta_grid),
                               kind=cfg.kind)
    ctx = Context(cfg, spec, noise, threads, force, report)
    if cfg.kind != "matrix_concentration":
        for b in cfg.betas:
            engine.check_step_size(spec, b, force)
    RUNNERS[cfg.kind](ctx)
    report.provenance = {
        "master_seed": cfg.master_seed,
        "component_seeds": dict(sorted(ctx.seeds.items())),
        "spec_id": spec_id(spec, noise),
        "package_version": _version(),
        "numpy_version": np.__version__,
        "kind": cfg.kind,
    }
    return report, ctx.artifacts


def run_experiment(cfg: ExperimentConfig, out_dir=None, *, threads: int | None = None, force: bool = False,
                   timestamp: bool = True) -> tuple[int, DiagnosticsReport]:
    """Run, write artifacts, and return (exit status, report): 0 all pass, 2 any failure."""
    out = Path(out_dir or cfg.output_dir or f"out/{cfg.kind}")
    out.mkdir(parents=True, exist_ok=True)
    report, artifacts = build_report(cfg, threads=threads, force=force)
    for name, writer in artifacts:
        log.info("writing %s", out / name)
        writer(out / name)
    (out / "report.json").write_text(report.to_json(timestamp=timestamp))
    (out / "report.csv").write_text(report.to_csv())
    (out / "summary.txt").write_text(report.summary())
    return (0 if report.passed else 2), report
