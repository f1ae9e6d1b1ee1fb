"""Experiment configuration: YAML files with schema and cross-field validation.

Errors name the offending field and the line it sits on (or the line of the
enclosing mapping when the field is missing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .model import DomainError, NoiseModel, ProblemSpec, problem_from_dict

KINDS = ("stationary", "tv_decay", "coupling", "last_iterate", "pr_average", "minibatch_boundedness",
         "matrix_concentration", "full_suite")

TOP_KEYS = {"kind", "master_seed", "output_dir", "beta", "beta_grid", "T", "n_replicas", "snapshot_times",
            "delta_grid", "n0", "n", "N", "problem", "theta0", "init", "coupling", "tv", "minibatch", "matrix",
            "scaling", "trajectory", "description"}
PROBLEM_REQUIRED = ("dim", "objective", "theta_star", "sigma_matrix", "mu", "L", "noise")
PROBLEM_OPTIONAL = ("l_sigma", "sigma_sq", "l_w", "k_bar", "k_lip", "k_bar_psi1", "ball_radius", "seed",
                    "constant_sources")

REQUIRED_BY_KIND = {
    "stationary": ("T", "n_replicas"),
    "tv_decay": ("tv",),
    "coupling": ("coupling",),
    "last_iterate": ("T", "n_replicas", "delta_grid"),
    "pr_average": ("n0", "n", "n_replicas", "delta_grid"),
    "minibatch_boundedness": ("N", "T", "n_replicas", "minibatch"),
    "matrix_concentration": ("matrix",),
    "full_suite": ("T", "n_replicas", "delta_grid"),
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str, line: int | None = None, source: str | None = None):
        where = f"{source}:" if source else ""
        where += f"line {line}: " if line is not None else ""
        super().__init__(f"{where}field '{field}': {message}")
        self.field = field
        self.line = line


def _marks(node, path=(), out=None) -> dict[tuple, int]:
    """Map each key path to its 1-based line number."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (k.value,)
            out[p] = k.start_mark.line + 1
            _marks(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _marks(v, path + (i,), out)
    return out


@dataclass
class ExperimentConfig:
    kind: str
    master_seed: int
    problem: dict[str, Any]
    output_dir: str | None = None
    beta: float | None = None
    beta_grid: list[float] | None = None
    T: int | None = None
    n_replicas: int | None = None
    snapshot_times: list[int] | None = None
    delta_grid: list[float] | None = None
    n0: int | None = None
    n: list[int] | None = None
    N: int | None = None
    theta0: list[float] | None = None
    init: dict[str, Any] | None = None
    coupling: dict[str, Any] | None = None
    tv: dict[str, Any] | None = None
    minibatch: dict[str, Any] | None = None
    matrix: dict[str, Any] | None = None
    scaling: dict[str, Any] | None = None
    trajectory: dict[str, Any] | None = None
    description: str = ""
    source: str | None = None
    marks: dict[tuple, int] = field(default_factory=dict, repr=False)
    _problem_cache: tuple | None = field(default=None, repr=False)

    def line(self, *path) -> int | None:
        for k in range(len(path), -1, -1):
            if tuple(path[:k]) in self.marks:
                return self.marks[tuple(path[:k])]
        return None

    def error(self, path: tuple, message: str) -> ConfigError:
        return ConfigError(".".join(str(p) for p in path), message, self.line(*path), self.source)

    @property
    def betas(self) -> list[float]:
        return list(self.beta_grid) if self.beta_grid is not None else [self.beta]

    def build_problem(self) -> tuple[ProblemSpec, NoiseModel]:
        if self._problem_cache is None:
            try:
                self._problem_cache = problem_from_dict(self.problem)
            except (DomainError, ValueError, KeyError, TypeError) as exc:
                raise self.error(("problem",), f"invalid problem: {exc}") from exc
        return self._problem_cache

    def theta_start(self, spec: ProblemSpec) -> np.ndarray:
        if self.theta0 is None:
            return spec.theta_star + 1.0
        return np.asarray(self.theta0, dtype=float)


def _num(cfg_get, path, kind=float, positive=False, nonneg=False):
    val = cfg_get(path)
    if val is None:
        return None
    try:
        if kind is int:
            if isinstance(val, bool) or (isinstance(val, float) and not val.is_integer()):
                raise TypeError
            out = int(val)
        else:
            if isinstance(val, bool):
                raise TypeError
            out = float(val)
    except (TypeError, ValueError):
        raise ConfigError(".".join(map(str, path)), f"expected {'an integer' if kind is int else 'a number'}")
    if positive and not out > 0:
        raise ConfigError(".".join(map(str, path)), "must be positive")
    if nonneg and out < 0:
        raise ConfigError(".".join(map(str, path)), "must be nonnegative")
    if kind is float and not math.isfinite(out):
        raise ConfigError(".".join(map(str, path)), "must be finite")
    return out


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError("<document>", f"YAML parse error: {getattr(exc, 'problem', exc)}", line, source) from exc
    if not isinstance(raw, dict):
        raise ConfigError("<document>", "top level must be a mapping", 1, source)
    marks = _marks(node) if node is not None else {}

    def err(path, msg):
        for k in range(len(path), -1, -1):
            if tuple(path[:k]) in marks:
                return ConfigError(".".join(map(str, path)), msg, marks[tuple(path[:k])], source)
        return ConfigError(".".join(map(str, path)), msg, None, source)

    def get(path):
        cur = raw
        for p in path:
            if isinstance(cur, dict) and p in cur:
                cur = cur[p]
            elif isinstance(cur, list) and isinstance(p, int) and p < len(cur):
                cur = cur[p]
            else:
                return None
        return cur

    def num(path, kind=float, **kw):
        try:
            return _num(get, path, kind, **kw)
        except ConfigError as exc:
            raise err(path, str(exc).split(": ", 1)[1]) from None

    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        raise err((unknown[0],), "unknown key")
    kind = raw.get("kind")
    if kind is None:
        raise err(("kind",), "missing")
    if kind not in KINDS:
        raise err(("kind",), f"must be one of {', '.join(KINDS)}")
    if "master_seed" not in raw:
        raise err(("master_seed",), "missing")
    seed = num(("master_seed",), int, nonneg=True)
    if seed >= 1 << 63:
        raise err(("master_seed",), "must be below 2**63")

    has_b, has_g = "beta" in raw, "beta_grid" in raw
    if has_b and has_g:
        raise err(("beta_grid",), "give exactly one of beta and beta_grid, not both")
    if not (has_b or has_g) and kind != "matrix_concentration":
        raise err(("beta",), "missing (give beta or beta_grid)")
    beta = num(("beta",), nonneg=True) if has_b else None
    grid = None
    if has_g:
        g = raw["beta_grid"]
        if not isinstance(g, list) or len(g) < 2:
            raise err(("beta_grid",), "must be a list of at least two step sizes")
        grid = [num(("beta_grid", i), positive=True) for i in range(len(g))]

    prob = raw.get("problem")
    if not isinstance(prob, dict):
        raise err(("problem",), "missing problem mapping")
    for k in PROBLEM_REQUIRED:
        if k not in prob:
            raise err(("problem", k), "missing")
    for k in prob:
        if k not in PROBLEM_REQUIRED and k not in PROBLEM_OPTIONAL:
            raise err(("problem", k), "unknown key")
    noise = prob["noise"]
    if not isinstance(noise, dict) or "kind" not in noise:
        raise err(("problem", "noise", "kind"), "missing")
    for k in ("mu", "L"):
        num(("problem", k), positive=True)
    num(("problem", "dim"), int, positive=True)

    def int_list(key):
        v = raw.get(key)
        if v is None:
            return None
        if isinstance(v, int) and not isinstance(v, bool):
            return [int(v)]
        if not isinstance(v, list):
            raise err((key,), "must be an integer or a list of integers")
        return [num((key, i), int, nonneg=True) for i in range(len(v))]

    def float_list(key, lo=0.0, hi=1.0):
        v = raw.get(key)
        if v is None:
            return None
        if not isinstance(v, list) or not v:
            raise err((key,), "must be a non-empty list")
        out = [num((key, i)) for i in range(len(v))]
        for i, x in enumerate(out):
            if not lo < x < hi:
                raise err((key, i), f"must lie in ({lo}, {hi})")
        return out

    cfg = ExperimentConfig(
        kind=kind,
        master_seed=seed,
        problem=prob or {},
        output_dir=raw.get("output_dir"),
        beta=beta,
        beta_grid=grid,
        T=num(("T",), int, nonneg=True),
        n_replicas=num(("n_replicas",), int, positive=True),
        snapshot_times=int_list("snapshot_times"),
        delta_grid=float_list("delta_grid"),
        n0=num(("n0",), int, nonneg=True),
        n=int_list("n"),
        N=num(("N",), int, positive=True),
        theta0=raw.get("theta0"),
        init=raw.get("init"),
        coupling=raw.get("coupling"),
        tv=raw.get("tv"),
        minibatch=raw.get("minibatch"),
        matrix=raw.get("matrix"),
        scaling=raw.get("scaling"),
        trajectory=raw.get("trajectory"),
        description=str(raw.get("description", "")),
        source=source,
        marks=marks,
    )
    for key in REQUIRED_BY_KIND[kind]:
        if getattr(cfg, key) is None:
            raise err((key,), f"required for kind '{kind}'")
    if cfg.snapshot_times and cfg.T is not None and max(cfg.snapshot_times) > cfg.T:
        raise err(("snapshot_times",), f"times must not exceed T={cfg.T}")
    if cfg.n is not None and any(v < 1 for v in cfg.n):
        raise err(("n",), "window lengths must be positive")
    if kind in ("last_iterate", "full_suite") and cfg.n_replicas is not None and cfg.delta_grid:
        need = math.ceil(30 / min(cfg.delta_grid))
        if cfg.n_replicas < need:
            raise err(("n_replicas",), f"at least {need} replicas needed for delta={min(cfg.delta_grid)}")
    for block, keys in (("coupling", ("n_pairs", "n_steps")), ("tv", ("times", "n_replicas")),
                        ("minibatch", ("radius", "delta")), ("matrix", ("N_grid", "trials", "delta"))):
        sub = getattr(cfg, block)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise err((block,), "must be a mapping")
        for k in keys:
            if k not in sub:
                raise err((block, k), "missing")
    if cfg.problem and cfg.theta0 is not None:
        if not isinstance(cfg.theta0, list) or len(cfg.theta0) != int(cfg.problem["dim"]):
            raise err(("theta0",), f"must be a list of length {cfg.problem['dim']}")
    if cfg.problem:
        cfg.build_problem()
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {p}: {exc.strerror}") from exc
    return parse_config(text, str(p))


def validate_config(path) -> list[str]:
    """Parse and cross-validate without running anything; returns info lines."""
    from .model import validate_step_size

    cfg = load_config(path)
    lines = [f"ok: {path} (kind={cfg.kind}, master_seed={cfg.master_seed})"]
    if cfg.problem:
        spec, noise = cfg.build_problem()
        for b in cfg.betas:
            if b is None or b == 0:
                continue
            rep = validate_step_size(spec, b)
            bad = [c.condition_id for c in rep.failures()]
            lines.append(f"beta={b:g}: " + ("all step-size conditions hold" if not bad
                                              else "violates " + ", ".join(bad)))
    return lines
