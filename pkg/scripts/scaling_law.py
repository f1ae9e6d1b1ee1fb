"""Print the sqrt(beta) scaling table of the stationary Psi2-tilde constant.

usage: python3 scripts/scaling_law.py [--replicas N] [--seed S] [--betas B ...]
"""

import argparse
import math

import numpy as np

from sgdchain import engine
from sgdchain.diagnostics import checks as ck, estimators as est
from sgdchain.model import NoiseModel, make_spec


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--replicas", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--betas", type=float, nargs="+", default=[0.0125, 0.025, 0.05, 0.1])
    args = p.parse_args()

    noise = NoiseModel.additive_gaussian([[1.0]])
    spec = make_spec("quadratic", [0.0], [[1.0]], noise)
    consts = []
    print("beta,T,psi2_tilde_constant,mc_error,transferred_bound")
    for i, b in enumerate(args.betas):
        T = int(math.ceil(15 / (b * spec.mu)))
        ens = engine.run_ensemble(spec, noise, b, spec.theta_star, T, [T], args.replicas, args.seed + i)
        e = est.estimate_psi2_tilde(np.abs(ens.at(T)[:, 0] - spec.theta_star[0]))
        consts.append(e.constant)
        print(f"{b:g},{T},{e.constant:.6f},{e.mc_error:.6f},{spec.k_bar * math.sqrt(8 * b / spec.mu):.6f}")
    fit = ck.check_sqrt_beta_scaling(args.betas, consts)
    print(f"# log-log slope {fit.empirical:.4f} (se {fit.mc_error:.4f}); {'PASS' if fit.passed else 'FAIL'} [0.4, 0.6]")


if __name__ == "__main__":
    main()
