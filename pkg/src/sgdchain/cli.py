"""Command-line entry point: ``sgdchain {run,validate,oracle,list-checks}``.

Exit status: 0 when every check passes, 2 when any check fails, 1 on error.
Progress goes to standard error; standard output carries only summaries.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys

import numpy as np

from . import engine, oracle as orc
from .config import ConfigError, load_config, validate_config
from .diagnostics import checks as ck
from .diagnostics.claims import CLAIMS
from .model import DomainError, NoiseKind, validate_step_size

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _threads(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("--threads must be at least 1")
    return n


def _seed(value: str) -> int:
    n = int(value, 0)
    if not 0 <= n < 1 << 63:
        raise argparse.ArgumentTypeError("--seed must lie in [0, 2**63)")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgdchain", description="Constant step-size SGD Markov chain lab")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, metavar="PATH")
    run.add_argument("--seed", type=_seed, help="override master_seed")
    run.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    run.add_argument("--force-step-size", action="store_true", help="run even if beta violates ergodicity")
    run.add_argument("--threads", type=_threads, help="cap on worker threads (default: $SGDCHAIN_THREADS)")
    run.add_argument("--no-timestamp", action="store_true", help="omit the timestamp from report.json")

    val = sub.add_parser("validate", help="validate a config without running it")
    val.add_argument("--config", required=True, metavar="PATH")

    orc_p = sub.add_parser("oracle", help="print closed-form quantities for the problem in a config")
    orc_p.add_argument("--config", required=True, metavar="PATH")
    orc_p.add_argument("--beta", type=float, help="step size (default: the config's beta)")

    sub.add_parser("list-checks", help="list claim ids with their statements")
    return p


def oracle_quantities(spec, noise, beta: float) -> dict:
    rep = validate_step_size(spec, beta)
    out = {
        "beta": beta,
        "spec": spec.summary(),
        "step_size_conditions": {c.condition_id: {"threshold": c.threshold, "admissible": c.admissible,
                                                  "condition": c.description} for c in rep.conditions},
        "variance_bound": ck.variance_bound(spec, beta),
        "drift_slope": (1 - beta * spec.mu) ** 2 + beta**2 * spec.l_sigma,
    }
    if spec.l_w is not None:
        aw = ck.contraction_factor(spec, beta)
        out["contraction_factor"] = aw
        out["contraction_factor_sq"] = aw**2
        out["C_W"] = 1 / (1 - aw) if aw < 1 else math.inf
    if spec.k_bar is not None:
        out["transferred_psi2_tilde"] = spec.k_bar * math.sqrt(8 * beta / spec.mu)
    if spec.k_lip is not None:
        out["transferred_lipschitz_psi2"] = spec.k_lip * math.sqrt(beta / spec.mu)
    if spec.linear and noise.kind is NoiseKind.ADDITIVE_GAUSSIAN and rep.admissible("ergodicity"):
        sol = orc.linear_gaussian_oracle(spec, noise, beta)
        out["stationary_mean"] = sol.stat_mean
        out["stationary_cov"] = sol.stat_cov
        out["stationary_trace"] = float(np.trace(sol.stat_cov))
        out["lyapunov_residual"] = sol.residual
        out["ar_spectral_radius"] = orc.spectral_radius(sol.ar_matrix)
    from .diagnostics.report import _clean
    return _clean(out)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    from .experiments import run_experiment

    threads = args.threads or engine.default_threads()
    status, report = run_experiment(cfg, args.out, threads=threads, force=args.force_step_size,
                                    timestamp=not args.no_timestamp)
    sys.stdout.write(report.summary())
    return status


def _cmd_validate(args) -> int:
    for line in validate_config(args.config):
        print(line)
    return EXIT_PASS


def _cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    spec, noise = cfg.build_problem()
    beta = args.beta if args.beta is not None else (cfg.beta if cfg.beta is not None else cfg.betas[-1])
    if beta is None or not beta > 0:
        raise DomainError("oracle needs a positive step size (--beta)")
    print(json.dumps(oracle_quantities(spec, noise, beta), indent=2, sort_keys=True))
    return EXIT_PASS


def _cmd_list(args) -> int:
    for c in CLAIMS.values():
        print(f"{c.claim_id}\t{c.kind}\t{c.title}\t{c.formula}")
    return EXIT_PASS


COMMANDS = {"run": _cmd_run, "validate": _cmd_validate, "oracle": _cmd_oracle, "list-checks": _cmd_list}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except engine.StepSizeError as exc:
        print(f"step-size error: {exc}", file=sys.stderr)
    except engine.DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
    except (DomainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
