"""The SGD Markov chain: single runs, replica ensembles and coupled pairs.

All variants share one block integrator.  Noise is drawn per replica from its
own counter-based stream in fixed chunks of ``CHUNK`` steps, so a replica's
path depends only on its seed, never on how replicas are batched or threaded.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import rng as rngmod
from .model import (
    DomainError,
    NoiseModel,
    ProblemSpec,
    check_compatible,
    draw_noise,
    minibatch_gradient,
    spec_id,
    validate_step_size,
)

CHUNK = 1024
DIVERGENCE_RADIUS = 1e12
FULL_STORAGE_CAP = 10_000_000
BLOCK_BUDGET = 4_000_000


class StepSizeError(ValueError):
    """Step size outside the ergodicity region and not forced."""


class DivergenceError(RuntimeError):
    def __init__(self, step: int, replica: int, value: float):
        super().__init__(f"chain diverged at step {step} in replica {replica} (||theta - theta*|| = {value:.3g})")
        self.step = step
        self.replica = replica


# ---------------------------------------------------------------- initial laws


@dataclass(frozen=True)
class PointInit:
    theta0: np.ndarray

    def __call__(self, gen: np.random.Generator) -> np.ndarray:
        return np.array(self.theta0, dtype=float)

    @property
    def description(self) -> str:
        return f"dirac({np.round(np.asarray(self.theta0), 6).tolist()})"


@dataclass(frozen=True)
class GaussianInit:
    mean: np.ndarray
    cov: np.ndarray

    def __call__(self, gen: np.random.Generator) -> np.ndarray:
        m = np.asarray(self.mean, dtype=float)
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        w, v = np.linalg.eigh(c)
        root = v * np.sqrt(np.clip(w, 0, None))
        return m + root @ gen.standard_normal(m.size)

    @property
    def description(self) -> str:
        return "gaussian(mean, cov)"


@dataclass(frozen=True)
class PoolInit:
    """Uniform draw from a fixed sample (an empirical stationary law)."""

    pool: np.ndarray

    def __call__(self, gen: np.random.Generator) -> np.ndarray:
        return np.array(self.pool[gen.integers(len(self.pool))], dtype=float)

    @property
    def description(self) -> str:
        return f"empirical_pool(n={len(self.pool)})"


def _describe(init) -> str:
    return getattr(init, "description", repr(init))


# ---------------------------------------------------------------- results


@dataclass
class Trajectory:
    spec_id: str
    beta: float
    seed: int
    iterates: np.ndarray
    stride: int = 1
    gradients: np.ndarray | None = None
    batch: int = 1
    projected: bool = False

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.iterates)) * self.stride

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


@dataclass
class Ensemble:
    spec_id: str
    beta: float
    n_replicas: int
    snapshot_times: tuple[int, ...]
    snapshots: dict[int, np.ndarray]
    seeds: list[int]
    master_seed: int
    init_description: str = ""
    windows: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    max_deviation: np.ndarray | None = None
    batch: int = 1
    projected: bool = False

    def at(self, t: int) -> np.ndarray:
        return self.snapshots[int(t)]

    def window_average(self, n0: int, n: int) -> np.ndarray:
        return self.windows[(int(n0), int(n))]

    def stack(self, times: Iterable[int] | None = None) -> np.ndarray:
        """Snapshots as an array of shape (len(times), R, d)."""
        ts = self.snapshot_times if times is None else list(times)
        return np.stack([self.snapshots[int(t)] for t in ts])


@dataclass
class CouplingRun:
    beta: float
    n_pairs: int
    sq_dists: np.ndarray  # (n_steps + 1, n_pairs)
    init_description: str
    seeds: list[int]
    master_seed: int
    spec_id: str = ""

    @property
    def n_steps(self) -> int:
        return self.sq_dists.shape[0] - 1


# ---------------------------------------------------------------- core


@dataclass
class _Plan:
    T: int
    snapshot_times: tuple[int, ...] = ()
    windows: tuple[tuple[int, int], ...] = ()
    track_max: bool = False
    track_pair: bool = False
    full_stride: int = 0
    record_gradients: bool = False
    batch: int = 1
    radius: float | None = None


def check_step_size(spec: ProblemSpec, beta: float, force: bool = False) -> None:
    """Raise StepSizeError unless beta satisfies the ergodicity condition (or ``force``)."""
    if beta < 0 or not math.isfinite(beta):
        raise StepSizeError(f"beta must be a nonnegative finite number, got {beta}")
    if beta == 0 or force:
        return
    cond = validate_step_size(spec, beta)["ergodicity"]
    if not cond.admissible:
        raise StepSizeError(
            f"step size {beta} violates the ergodicity condition '{cond.condition_id}': "
            f"{cond.description} (threshold {cond.threshold:.6g}); pass force=True to run anyway"
        )


def _project(theta: np.ndarray, radius: float) -> np.ndarray:
    nrm = np.sqrt((theta * theta).sum(-1, keepdims=True))
    scale = np.where(nrm > radius, radius / np.where(nrm > 0, nrm, 1.0), 1.0)
    return theta * scale


def _run_block(spec, noise, beta, seeds, theta0, first_index, plan: _Plan) -> dict:
    """Integrate a block of replicas; theta0 has shape (B, K, d)."""
    B, K, d = theta0.shape
    N = plan.batch
    gens = [rngmod.stream(s, rngmod.NOISE) for s in seeds]
    theta = theta0.copy()
    ts = spec.theta_star
    out: dict = {"snapshots": {}}
    snaps = set(plan.snapshot_times)
    if 0 in snaps:
        out["snapshots"][0] = theta[:, 0].copy()
    sums = {w: np.zeros((B, d)) for w in plan.windows}
    dev0 = ((theta[:, 0] - ts) ** 2).sum(-1)
    if plan.track_max:
        out["max_sq"] = dev0.copy()
    if plan.track_pair:
        pair = np.empty((plan.T + 1, B))
        pair[0] = ((theta[:, 0] - theta[:, 1]) ** 2).sum(-1)
    if plan.full_stride:
        full = [theta[0, 0].copy()]
    grads = [] if plan.record_gradients else None
    limit = DIVERGENCE_RADIUS**2

    t = 0
    while t < plan.T:
        S = min(CHUNK, plan.T - t)
        per = [draw_noise(spec, noise, g, (S, N)) for g in gens]
        draws = {k: np.stack([p[k] for p in per]) for k in per[0]}
        for s in range(S):
            step = {k: v[:, s] for k, v in draws.items()}
            g = minibatch_gradient(spec, noise, theta, step)
            theta = theta - beta * g
            if plan.radius is not None:
                theta = _project(theta, plan.radius)
            t += 1
            dev = ((theta - ts) ** 2).sum(-1)
            if not np.all(dev <= limit):
                bad = np.argwhere(~(dev <= limit))[0]
                raise DivergenceError(t, first_index + int(bad[0]), float(np.sqrt(dev[tuple(bad)])))
            if plan.track_max:
                np.maximum(out["max_sq"], dev[:, 0], out=out["max_sq"])
            if plan.track_pair:
                pair[t] = ((theta[:, 0] - theta[:, 1]) ** 2).sum(-1)
            for (n0, n), acc in sums.items():
                if n0 < t <= n0 + n:
                    acc += theta[:, 0]
            if t in snaps:
                out["snapshots"][t] = theta[:, 0].copy()
            if grads is not None:
                grads.append(g[0, 0].copy())
            if plan.full_stride and t % plan.full_stride == 0:
                full.append(theta[0, 0].copy())
    out["windows"] = {w: acc / w[1] for w, acc in sums.items()}
    if plan.track_pair:
        out["pair"] = pair
    if plan.full_stride:
        out["full"] = np.array(full)
    if grads is not None:
        out["grads"] = np.array(grads).reshape(-1, d)
    return out


def _block_size(plan: _Plan, d: int, K: int) -> int:
    per_replica = min(CHUNK, max(plan.T, 1)) * plan.batch * (d + 1) * K
    return max(1, BLOCK_BUDGET // per_replica)


def default_threads() -> int:
    env = os.environ.get("SGDCHAIN_THREADS")
    return max(1, int(env)) if env else 1


def _run_many(spec, noise, beta, seeds, inits, plan: _Plan, threads: int | None) -> list[dict]:
    n = len(seeds)
    size = _block_size(plan, spec.dim, inits.shape[1])
    starts = list(range(0, n, size))

    def job(a):
        b = min(a + size, n)
        return _run_block(spec, noise, beta, seeds[a:b], inits[a:b], a, plan)

    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(starts) == 1:
        return [job(a) for a in starts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, starts))


def _prepare(spec, noise, beta, force):
    check_compatible(spec, noise)
    check_step_size(spec, beta, force)


def _check_theta0(spec: ProblemSpec, theta0) -> np.ndarray:
    th = np.array(theta0, dtype=float).reshape(-1)
    if th.shape != (spec.dim,):
        raise DomainError(f"theta0 must have length {spec.dim}")
    return th


# ---------------------------------------------------------------- public runners


def _single(spec, noise, beta, theta0, T, seed, *, batch, radius, force, record_gradients) -> Trajectory:
    if T < 0:
        raise ValueError("T must be nonnegative")
    _prepare(spec, noise, beta, force)
    th = _check_theta0(spec, theta0)
    stride = max(1, math.ceil((T + 1) * spec.dim / FULL_STORAGE_CAP))
    plan = _Plan(T=T, full_stride=stride, record_gradients=record_gradients, batch=batch, radius=radius)
    res = _run_block(spec, noise, float(beta), [int(seed)], th[None, None, :], 0, plan)
    return Trajectory(spec_id(spec, noise), float(beta), int(seed), res["full"], stride,
                      res.get("grads"), batch, radius is not None)


def run_chain(spec: ProblemSpec, noise: NoiseModel, beta: float, theta0, T: int, seed: int, *,
              force: bool = False, record_gradients: bool = False) -> Trajectory:
    """Plain SGD: theta_{t+1} = theta_t - beta * G(theta_t, zeta_t)."""
    return _single(spec, noise, beta, theta0, T, seed, batch=1, radius=None, force=force,
                   record_gradients=record_gradients)


def run_projected_chain(spec: ProblemSpec, noise: NoiseModel, beta: float, theta0, T: int, seed: int, *,
                        force: bool = False, record_gradients: bool = False) -> Trajectory:
    """SGD followed by Euclidean projection onto the ball of radius ``spec.ball_radius``."""
    if spec.ball_radius is None:
        raise DomainError("projected chain needs spec.ball_radius")
    th = _check_theta0(spec, theta0)
    if np.linalg.norm(th) > spec.ball_radius:
        raise DomainError("theta0 lies outside the ball")
    return _single(spec, noise, beta, th, T, seed, batch=1, radius=float(spec.ball_radius), force=force,
                   record_gradients=record_gradients)


def run_minibatch_chain(spec: ProblemSpec, noise: NoiseModel, beta: float, N: int, theta0, T: int, seed: int, *,
                        force: bool = False, record_gradients: bool = False) -> Trajectory:
    """SGD with each step averaging ``N`` fresh gradient draws."""
    if int(N) < 1:
        raise ValueError("minibatch size N must be at least 1")
    return _single(spec, noise, beta, theta0, T, seed, batch=int(N), radius=None, force=force,
                   record_gradients=record_gradients)


def _initial_states(seeds: Sequence[int], samplers: Sequence[Callable], d: int) -> np.ndarray:
    out = np.empty((len(seeds), len(samplers), d))
    if all(isinstance(smp, PointInit) for smp in samplers):
        out[:] = np.stack([np.asarray(smp.theta0, dtype=float).reshape(d) for smp in samplers])
        return out
    for r, s in enumerate(seeds):
        gen = rngmod.stream(s, rngmod.INIT)
        for k, smp in enumerate(samplers):
            out[r, k] = np.asarray(smp(gen), dtype=float).reshape(d)
    return out


def run_ensemble(spec: ProblemSpec, noise: NoiseModel, beta: float, init_sampler, T: int,
                 snapshot_times: Iterable[int], n_replicas: int, master_seed: int, *, batch: int = 1,
                 project: bool = False, windows: Iterable[tuple[int, int]] = (), track_max: bool = False,
                 threads: int | None = None, force: bool = False) -> Ensemble:
    """Independent replicas, replica ``r`` driven by ``rng.replica_seed(master_seed, r)``.

    ``init_sampler`` is either a vector (common deterministic start) or a
    callable taking the replica's initial-state generator.  ``windows`` lists
    ``(n0, n)`` pairs for which the tail average over ``(n0, n0 + n]`` is kept.
    """
    times = tuple(sorted(int(t) for t in snapshot_times))
    if len(set(times)) != len(times):
        raise ValueError("snapshot_times must be distinct")
    if times and (times[0] < 0 or times[-1] > T):
        raise ValueError(f"snapshot_times must lie in [0, {T}]")
    wins = tuple((int(a), int(b)) for a, b in windows)
    for n0, n in wins:
        if n < 1 or n0 < 0 or n0 + n > T:
            raise ValueError(f"average window ({n0}, {n}) does not fit in [0, {T}]")
    if n_replicas < 1:
        raise ValueError("n_replicas must be positive")
    if project and spec.ball_radius is None:
        raise DomainError("projected ensemble needs spec.ball_radius")
    _prepare(spec, noise, beta, force)
    sampler = init_sampler if callable(init_sampler) else PointInit(_check_theta0(spec, init_sampler))
    seeds = rngmod.replica_seeds(master_seed, n_replicas)
    inits = _initial_states(seeds, [sampler], spec.dim)
    plan = _Plan(T=int(T), snapshot_times=times, windows=wins, track_max=track_max, batch=int(batch),
                 radius=float(spec.ball_radius) if project else None)
    parts = _run_many(spec, noise, float(beta), seeds, inits, plan, threads)
    snaps = {t: np.concatenate([p["snapshots"][t] for p in parts]) for t in times}
    wavg = {w: np.concatenate([p["windows"][w] for p in parts]) for w in wins}
    maxdev = np.sqrt(np.concatenate([p["max_sq"] for p in parts])) if track_max else None
    return Ensemble(spec_id(spec, noise), float(beta), int(n_replicas), times, snaps, seeds, int(master_seed),
                    _describe(sampler), wavg, maxdev, int(batch), project)


def run_coupled_pair(spec: ProblemSpec, noise: NoiseModel, beta: float, init1_sampler, init2_sampler,
                     n_steps: int, n_pairs: int, master_seed: int, *, threads: int | None = None,
                     force: bool = False) -> CouplingRun:
    """Synchronously coupled chains: both members of a pair share every noise draw."""
    if n_pairs < 1 or n_steps < 0:
        raise ValueError("need n_pairs >= 1 and n_steps >= 0")
    _prepare(spec, noise, beta, force)
    s1 = init1_sampler if callable(init1_sampler) else PointInit(_check_theta0(spec, init1_sampler))
    s2 = init2_sampler if callable(init2_sampler) else PointInit(_check_theta0(spec, init2_sampler))
    seeds = rngmod.replica_seeds(master_seed, n_pairs)
    inits = _initial_states(seeds, [s1, s2], spec.dim)
    plan = _Plan(T=int(n_steps), track_pair=True)
    parts = _run_many(spec, noise, float(beta), seeds, inits, plan, threads)
    sq = np.concatenate([p["pair"] for p in parts], axis=1)
    return CouplingRun(float(beta), int(n_pairs), sq, f"{_describe(s1)} vs {_describe(s2)}", seeds,
                       int(master_seed), spec_id(spec, noise))


# ---------------------------------------------------------------- CSV output


def write_ensemble_csv(ens: Ensemble, path) -> None:
    """Columns: replica, time, coord_0 .. coord_{d-1}; 17 significant digits."""
    d = next(iter(ens.snapshots.values())).shape[1] if ens.snapshots else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "time"] + [f"coord_{i}" for i in range(d)])
        for t in ens.snapshot_times:
            snap = ens.snapshots[t]
            for r in range(ens.n_replicas):
                w.writerow([r, t] + [f"{v:.17g}" for v in snap[r]])


def read_ensemble_csv(path) -> dict[int, np.ndarray]:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out: dict[int, list] = {}
    for row in rows:
        out.setdefault(int(row[1]), []).append(row[2:])
    return {t: np.array(v) for t, v in out.items()}


def write_coupling_csv(run: CouplingRun, path) -> None:
    """Columns: pair, step, sq_dist; 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair", "step", "sq_dist"])
        for p in range(run.n_pairs):
            col = run.sq_dists[:, p]
            for t, v in enumerate(col):
                w.writerow([p, t, f"{v:.17g}"])


def read_coupling_csv(path) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n_pairs = int(rows[:, 0].max()) + 1
    n_steps = int(rows[:, 1].max()) + 1
    out = np.empty((n_steps, n_pairs))
    out[rows[:, 1].astype(int), rows[:, 0].astype(int)] = rows[:, 2]
    return out
