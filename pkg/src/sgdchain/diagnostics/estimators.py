"""Empirical moment and concentration-constant estimators.

Tilde families come from moments (``E exp(l^2 X^2)`` or ``||X||_Lp``); the
plain families come from the empirical moment generating function of the
centred sample on a grid of ``l``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

JACKKNIFE_GROUPS = 20
K_FLOOR = 1e-12
MAX_TERM_SHARE = 0.5
MGF_CEILING = 1e6
MIN_MOMENT_SAMPLES = 100
MIN_CONCENTRATION_SAMPLES = 10_000
BISECTION_RTOL = 1e-7


class Family(str, enum.Enum):
    SUB_GAUSSIAN_TILDE = "SubGaussianTilde"
    SUB_GAUSSIAN = "SubGaussian"
    SUB_EXP_TILDE = "SubExpTilde"
    SUB_EXP = "SubExp"


class Method(str, enum.Enum):
    MOMENT_RATIO = "MomentRatio"
    MGF_GRID = "MgfGrid"


class EstimationError(ValueError):
    pass


class HeavyTailError(EstimationError):
    pass


@dataclass
class ConcentrationEstimate:
    family: Family
    constant: float
    method: Method
    n_samples: int
    mc_error: float = 0.0
    p_max: int | None = None
    lambda_grid: tuple[float, ...] | None = None
    label: str = ""
    at_floor: bool = False

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "constant": self.constant,
            "method": self.method.value,
            "n_samples": self.n_samples,
            "mc_error": self.mc_error,
            "p_max": self.p_max,
            "lambda_grid_size": None if self.lambda_grid is None else len(self.lambda_grid),
            "label": self.label,
            "at_floor": self.at_floor,
        }


@dataclass
class MomentEstimate:
    orders: np.ndarray
    values: np.ndarray
    stderr: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __getitem__(self, p: int) -> float:
        return float(self.values[int(p) - 1])

    def se(self, p: int) -> float:
        return float(self.stderr[int(p) - 1])


def _norms(samples, theta_star=None) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if theta_star is not None:
        x = x - np.asarray(theta_star, dtype=float).reshape(1, -1)
    return np.sqrt((x * x).sum(-1))


def max_moment_order(n: int) -> int:
    return int(math.floor(math.log2(n)))


def _lp_norms(r: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """(mean r^p)^(1/p) computed in log space for stability."""
    out = np.zeros(len(orders))
    pos = r[r > 0]
    if pos.size == 0:
        return out
    logr = np.log(pos)
    for i, p in enumerate(orders):
        out[i] = math.exp((logsumexp(p * logr) - math.log(r.size)) / p)
    return out


def estimate_moments(samples, theta_star=None, p_max: int = 8) -> MomentEstimate:
    """M_p = (E ||theta - theta*||^p)^(1/p) for p = 1..p_max with delete-a-group jackknife errors."""
    r = _norms(samples, theta_star)
    n = r.size
    if n < MIN_MOMENT_SAMPLES:
        raise EstimationError(f"need at least {MIN_MOMENT_SAMPLES} samples, got {n}")
    if p_max < 1 or p_max > max_moment_order(n):
        raise EstimationError(f"p_max={p_max} outside [1, log2(n)={max_moment_order(n)}] for n={n}")
    orders = np.arange(1, p_max + 1)
    full = _lp_norms(r, orders)
    g = JACKKNIFE_GROUPS
    groups = np.array_split(np.arange(n), g)
    reps = np.array([_lp_norms(np.delete(r, idx), orders) for idx in groups])
    se = np.sqrt((g - 1) / g * ((reps - reps.mean(0)) ** 2).sum(0))
    # Lyapunov's inequality holds exactly for the empirical measure; enforce against rounding
    full = np.maximum.accumulate(full)
    return MomentEstimate(orders, full, se)


def _check_scalar(samples, n_min: int) -> np.ndarray:
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < n_min:
        raise EstimationError(f"need at least {n_min} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise EstimationError("samples contain non-finite values")
    return x


def _log_mean_exp(v: np.ndarray) -> float:
    return float(logsumexp(v) - math.log(v.size))


def estimate_psi2_tilde(samples, n_min: int = MIN_CONCENTRATION_SAMPLES, n_interior: int = 8,
                        label: str = "") -> ConcentrationEstimate:
    """Smallest K with mean exp(l^2 X^2) <= exp(l^2 K^2) on 0 <= l <= 1/K.

    s -> log E exp(s X^2) is convex and vanishes at 0, so the condition is
    monotone in K and fixed by its value at l = 1/K; K is found by bisection and
    the interior grid points are verified as well.
    """
    x = _check_scalar(samples, n_min)
    x2 = x * x
    scale = math.sqrt(float(x2.mean()))
    if scale == 0:
        return ConcentrationEstimate(Family.SUB_GAUSSIAN_TILDE, K_FLOOR, Method.MOMENT_RATIO, x.size,
                                     0.0, lambda_grid=(), label=label, at_floor=True)

    def excess(k):
        return _log_mean_exp(x2 / (k * k)) - 1.0

    # at K = max|x| every term is <= e, so the condition always holds there
    hi = max(scale, math.sqrt(float(x2.max())))
    lo = K_FLOOR
    if excess(lo) <= 0:
        hi = lo
    while hi - lo > BISECTION_RTOL * hi:
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * hi
        if excess(mid) <= 0:
            hi = mid
        else:
            lo = mid
    k = hi
    terms = np.exp(x2 / (k * k) - float(x2.max()) / (k * k))
    share = float(terms.max() / terms.sum())
    if share > MAX_TERM_SHARE:
        raise HeavyTailError(f"a single sample carries {share:.0%} of the MGF at l = 1/K (heavy tails)")
    lams = tuple(float(v) for v in np.linspace(1.0 / k, 0, n_interior + 1, endpoint=False)[::-1])
    for lam in lams:
        if _log_mean_exp(lam * lam * x2) > lam * lam * k * k * (1 + 1e-9) + 1e-12:
            raise EstimationError("interior MGF condition violated; convexity argument failed numerically")
    # delta-method error of K from the error of the empirical MGF at l = 1/K
    w = np.exp(x2 / (k * k) - float(x2.max()) / (k * k))
    m = w.mean()
    se_log = w.std(ddof=1) / (math.sqrt(x.size) * m)
    dh_dk = 2.0 / k**3 * float((x2 * w).mean()) / m
    mc = se_log / dh_dk if dh_dk > 0 else 0.0
    return ConcentrationEstimate(Family.SUB_GAUSSIAN_TILDE, k, Method.MOMENT_RATIO, x.size, float(mc),
                                 lambda_grid=lams, label=label, at_floor=k <= K_FLOOR * 1.0001)


def estimate_psi1_tilde(samples, p_max: int | None = None, n_min: int = MIN_CONCENTRATION_SAMPLES,
                        label: str = "") -> ConcentrationEstimate:
    """K = max_p ||X||_Lp / p over p = 1..p_max (default floor(log2 n), at most 20)."""
    x = _check_scalar(samples, n_min)
    if p_max is None:
        p_max = min(max_moment_order(x.size), 20)
    mom = estimate_moments(np.abs(x), None, p_max)
    ratios = mom.values / mom.orders
    i = int(np.argmax(ratios))
    k = float(ratios[i])
    floor = k <= 0
    return ConcentrationEstimate(Family.SUB_EXP_TILDE, max(k, K_FLOOR), Method.MOMENT_RATIO, x.size,
                                 float(mom.stderr[i] / mom.orders[i]), p_max=p_max, label=label, at_floor=floor)


def _centered(x: np.ndarray) -> np.ndarray:
    return x - x.mean()


def estimate_psi2(samples, n_lambda: int = 32, lam_sd_max: float = 2.5, n_min: int = MIN_CONCENTRATION_SAMPLES,
                  label: str = "") -> ConcentrationEstimate:
    """K^2 = max over the grid of log mean exp(l X) / l^2 for the centred sample.

    The grid is symmetric, |l| * sd(X) in [0.1, lam_sd_max], log spaced.
    """
    x = _centered(_check_scalar(samples, n_min))
    sd = float(x.std())
    if sd == 0:
        return ConcentrationEstimate(Family.SUB_GAUSSIAN, K_FLOOR, Method.MGF_GRID, x.size, 0.0,
                                     lambda_grid=(), label=label, at_floor=True)
    mags = np.geomspace(0.1, lam_sd_max, n_lambda // 2) / sd
    grid = np.concatenate([-mags[::-1], mags])
    vals = np.array([_log_mean_exp(l * x) / (l * l) for l in grid])
    i = int(np.argmax(vals))
    k2 = max(float(vals[i]), 0.0)
    k = math.sqrt(k2)
    lam = grid[i]
    e = np.exp(lam * x - float((lam * x).max()))
    se_log = e.std(ddof=1) / (math.sqrt(x.size) * e.mean())
    mc = se_log / (lam * lam) / (2 * k) if k > 0 else 0.0
    return ConcentrationEstimate(Family.SUB_GAUSSIAN, max(k, K_FLOOR), Method.MGF_GRID, x.size, float(mc),
                                 lambda_grid=tuple(float(g) for g in grid), label=label, at_floor=k == 0)


def estimate_psi1(samples, n_lambda: int = 16, n_min: int = MIN_CONCENTRATION_SAMPLES,
                  label: str = "") -> ConcentrationEstimate:
    """Smallest K with log mean exp(l X) <= l^2 K^2 for all |l| <= 1/K (centred sample).

    Feasibility is monotone in K, so K is found by bisection with the
    condition checked on a symmetric grid of ``n_lambda`` points in (0, 1/K].
    """
    x = _centered(_check_scalar(samples, n_min))
    sd = float(x.std())
    if sd == 0:
        return ConcentrationEstimate(Family.SUB_EXP, K_FLOOR, Method.MGF_GRID, x.size, 0.0,
                                     lambda_grid=(), label=label, at_floor=True)
    fr = np.linspace(1.0 / n_lambda, 1.0, n_lambda)

    def worst(k):
        lams = np.concatenate([-fr[::-1], fr]) / k
        return max(_log_mean_exp(l * x) - (l * k) ** 2 for l in lams)

    lo, hi = 1e-3 * sd, sd
    while worst(hi) > 0:
        hi *= 2
        if hi > MGF_CEILING * sd:
            raise HeavyTailError("MGF condition unsatisfiable below 1e6 x sample std")
    while worst(lo) <= 0 and lo > K_FLOOR:
        lo /= 2
    while hi - lo > BISECTION_RTOL * hi:
        mid = math.sqrt(lo * hi)
        if worst(mid) <= 0:
            hi = mid
        else:
            lo = mid
    k = hi
    grid = tuple(float(v) for v in np.concatenate([-fr[::-1], fr]) / k)
    # error from the binding grid point, propagated through l^2 K^2
    vals = [(_log_mean_exp(l * x) - (l * k) ** 2, l) for l in grid]
    _, lam = max(vals)
    e = np.exp(lam * x - float((lam * x).max()))
    se_log = e.std(ddof=1) / (math.sqrt(x.size) * e.mean())
    mc = se_log / (2 * lam * lam * k)
    return ConcentrationEstimate(Family.SUB_EXP, k, Method.MGF_GRID, x.size, float(mc), lambda_grid=grid,
                                 label=label)


def half_normal_psi2_tilde(scale: float = 1.0) -> float:
    """Exact Psi2-tilde constant of |N(0, scale^2)|: K^2 = 2 s^2 / (1 - e^-2)."""
    return scale * math.sqrt(2.0 / (1.0 - math.exp(-2.0)))


def ols_fit(x, y, w=None) -> dict:
    """Weighted least squares line; returns slope, intercept, their errors and r^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    design = np.stack([np.ones_like(x), x], axis=1)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    resid = y - design @ coef
    dof = max(len(x) - 2, 1)
    s2 = float((w * resid**2).sum() / dof)
    cov = np.linalg.inv(design.T @ (design * w[:, None]))
    ybar = float((w * y).sum() / w.sum())
    ss_tot = float((w * (y - ybar) ** 2).sum())
    r2 = 1.0 - float((w * resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return {
        "slope": float(coef[1]),
        "intercept": float(coef[0]),
        "slope_se": float(math.sqrt(max(cov[1, 1] * s2, 0.0))),
        "intercept_se": float(math.sqrt(max(cov[0, 0] * s2, 0.0))),
        "slope_se_known_var": float(math.sqrt(cov[1, 1])),
        "intercept_se_known_var": float(math.sqrt(cov[0, 0])),
        "r2": r2,
        "n": len(x),
    }
