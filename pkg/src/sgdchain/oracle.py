"""Closed-form laws for linear gradients with additive Gaussian noise.

There ``theta_t - theta*`` is the vector AR(1) process
``x_{t+1} = A x_t + beta * xi_t`` with ``A = I - beta * Sigma``, so every finite-time
marginal, the stationary law and the law of tail averages are Gaussian and
computable exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg, stats

from .model import DomainError, NoiseKind, NoiseModel, ProblemSpec

MAX_DIM = 50
SQRT_CLAMP = 1e-12


class OracleError(ValueError):
    pass


def spectral_radius(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(a)))))


def lyapunov_residual(a, q, v) -> float:
    a, q, v = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (a, q, v))
    return float(np.linalg.norm(v - a @ v @ a.T - q))


def solve_stationary_cov(a, q) -> np.ndarray:
    """Unique solution of V = A V A^T + Q via the vectorised linear system.

    One step of iterative refinement brings the residual to rounding level.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    d = a.shape[0]
    if a.shape != (d, d) or q.shape != (d, d):
        raise OracleError("A and Q must be square matrices of equal size")
    if d > MAX_DIM:
        raise OracleError(f"dimension {d} exceeds the cap of {MAX_DIM}")
    if not np.allclose(q, q.T, atol=1e-14):
        raise OracleError("Q must be symmetric")
    if np.linalg.eigvalsh(0.5 * (q + q.T))[0] < -1e-12 * max(1.0, np.abs(q).max()):
        raise OracleError("Q must be positive semi-definite")
    if spectral_radius(a) >= 1:
        raise OracleError("spectral radius of A must be below 1")
    system = np.eye(d * d) - np.kron(a, a)
    try:
        lu = linalg.lu_factor(system, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise OracleError(f"singular Lyapunov system: {exc}") from exc
    # row-major vec: vec(A V A^T) = kron(A, A) vec(V)
    v = linalg.lu_solve(lu, q.reshape(-1)).reshape(d, d)
    for _ in range(3):
        r = q + a @ v @ a.T - v
        if np.linalg.norm(r) <= 1e-14 * max(np.linalg.norm(v), 1e-300):
            break
        v = v + linalg.lu_solve(lu, r.reshape(-1)).reshape(d, d)
    v = 0.5 * (v + v.T)
    if np.linalg.norm(q) == 0:
        return np.zeros((d, d))
    return v


def sqrtm_psd(c: np.ndarray) -> np.ndarray:
    c = np.atleast_2d(np.asarray(c, dtype=float))
    w, u = np.linalg.eigh(0.5 * (c + c.T))
    tol = SQRT_CLAMP * max(1.0, float(np.abs(w).max()))
    if w.min() < -tol:
        raise OracleError("covariance is not positive semi-definite")
    return (u * np.sqrt(np.clip(w, 0.0, None))) @ u.T


def gaussian_w2(mean1, cov1, mean2, cov2) -> float:
    """Wasserstein-2 distance between two Gaussians (Bures formula)."""
    m1 = np.atleast_1d(np.asarray(mean1, dtype=float))
    m2 = np.atleast_1d(np.asarray(mean2, dtype=float))
    c1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    c2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    r2 = sqrtm_psd(c2)
    cross = sqrtm_psd(r2 @ c1 @ r2)
    bures = float(np.trace(c1) + np.trace(c2) - 2 * np.trace(cross))
    return math.sqrt(max(float(np.sum((m1 - m2) ** 2)) + bures, 0.0))


@dataclass(frozen=True, eq=False)
class OracleSolution:
    ar_matrix: np.ndarray
    noise_cov: np.ndarray
    stat_cov: np.ndarray
    stat_mean: np.ndarray

    @property
    def dim(self) -> int:
        return self.ar_matrix.shape[0]

    @property
    def residual(self) -> float:
        return lyapunov_residual(self.ar_matrix, self.noise_cov, self.stat_cov)

    def autocov_trace(self, lag: int) -> float:
        """E<x_i, x_{i+lag}> at stationarity, tr(A^lag V)."""
        return float(np.trace(np.linalg.matrix_power(self.ar_matrix, int(lag)) @ self.stat_cov))


def linear_gaussian_oracle(spec: ProblemSpec, noise: NoiseModel, beta: float) -> OracleSolution:
    if not spec.linear or noise.kind is not NoiseKind.ADDITIVE_GAUSSIAN:
        raise DomainError("the closed-form oracle needs a linear gradient and additive Gaussian noise")
    a = np.eye(spec.dim) - beta * spec.sigma_matrix
    q = beta**2 * noise.cov
    return OracleSolution(a, q, solve_stationary_cov(a, q), spec.theta_star.copy())


def ar1_marginal_law(oracle: OracleSolution, theta0, t: int, init_cov=None) -> tuple[np.ndarray, np.ndarray]:
    """Law of theta_t given theta_0 ~ N(theta0, init_cov) (Dirac when init_cov is None)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    a, q = oracle.ar_matrix, oracle.noise_cov
    d = oracle.dim
    x = np.asarray(theta0, dtype=float).reshape(d) - oracle.stat_mean
    cov = np.zeros((d, d)) if init_cov is None else np.atleast_2d(np.asarray(init_cov, dtype=float)).copy()
    for _ in range(int(t)):
        x = a @ x
        cov = a @ cov @ a.T + q
    return oracle.stat_mean + x, 0.5 * (cov + cov.T)


def _npdf(x, m, s):
    return np.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))


def _crossings(m1: float, v1: float, m2: float, v2: float) -> list[float]:
    """Real roots of log N(x; m1, v1) = log N(x; m2, v2), computed without cancellation."""
    qa = 0.5 / v2 - 0.5 / v1
    qb = m1 / v1 - m2 / v2
    qc = 0.5 * m2**2 / v2 - 0.5 * m1**2 / v1 + 0.5 * math.log(v2 / v1)
    disc = qb * qb - 4 * qa * qc
    if disc < 0:
        return []
    q = -0.5 * (qb + math.copysign(math.sqrt(disc), qb))
    roots = []
    if q != 0:
        roots.append(qc / q)
    if qa != 0:
        roots.append(q / qa)
    return sorted(r for r in roots if math.isfinite(r))


def tv_gaussian_1d(m1: float, v1: float, m2: float, v2: float) -> float:
    """Total variation between N(m1, v1) and N(m2, v2) by numerical integration.

    The integrand |p1 - p2| is split at the density crossing points so each
    piece is smooth; adaptive quadrature on [min m - 12 s, max m + 12 s].
    """
    if not (v1 > 0 and v2 > 0):
        raise OracleError("variances must be positive")
    s1, s2 = math.sqrt(v1), math.sqrt(v2)
    smax = max(s1, s2)
    lo, hi = min(m1, m2) - 12 * smax, max(m1, m2) + 12 * smax
    cuts = [lo, hi] + _crossings(m1, v1, m2, v2)
    # also split at the means so narrow peaks are resolved
    cuts += [m1, m2]
    pts = sorted(c for c in set(cuts) if lo <= c <= hi)

    def f(x):
        return abs(_npdf(x, m1, s1) - _npdf(x, m2, s2))

    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            val, _ = integrate.quad(f, a, b, epsabs=1e-12, epsrel=1e-12, limit=200)
            total += val
    return min(max(0.5 * total, 0.0), 1.0)


def tv_gaussian_1d_exact(m1: float, v1: float, m2: float, v2: float) -> float:
    """Same quantity from the normal CDF at the crossing points (test oracle)."""
    s1, s2 = math.sqrt(v1), math.sqrt(v2)
    xs = _crossings(m1, v1, m2, v2)
    if not xs:
        return 0.0
    # TV = sup over sets = |P1(A) - P2(A)| with A bounded by the crossing points
    edges = [-math.inf] + xs + [math.inf]
    p1 = np.diff(stats.norm.cdf(edges, m1, s1))
    p2 = np.diff(stats.norm.cdf(edges, m2, s2))
    return float(0.5 * np.abs(p1 - p2).sum())


def pr_average_law(oracle: OracleSolution, theta0, n0: int, n: int, init_cov=None) -> tuple[np.ndarray, np.ndarray]:
    """Law of (1/n) sum_{t=n0+1}^{n0+n} theta_t.

    With P_j = cov(theta_j) and R_j = sum_{i<j} cov(theta_j, theta_i) over the
    window, R_{j+1} = A (R_j + P_j), since cov(theta_{j+1}, theta_i) = A cov(theta_j, theta_i).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    a = oracle.ar_matrix
    d = oracle.dim
    mean_j, cov_j = ar1_marginal_law(oracle, theta0, n0 + 1, init_cov)
    x = mean_j - oracle.stat_mean
    msum = np.zeros(d)
    csum = np.zeros((d, d))
    cross = np.zeros((d, d))
    for j in range(n):
        msum += x
        csum += cov_j + cross + cross.T
        cross = a @ (cross + cov_j)
        x = a @ x
        cov_j = a @ cov_j @ a.T + oracle.noise_cov
    cov = csum / n**2
    return oracle.stat_mean + msum / n, 0.5 * (cov + cov.T)


def stationary_average_variance_1d(a: float, v: float, n: int) -> float:
    """Closed-form variance of a length-n average of a stationary scalar AR(1)."""
    if a == 1:
        return v
    return (v / n) * (1 + 2 * (a / (1 - a)) * (1 - (1 - a**n) / (n * (1 - a))))


def gaussian_density_ratio_sup(mean_nu, cov_nu, mean_pi, cov_pi) -> float:
    """sup_x dN(mean_nu, cov_nu)/dN(mean_pi, cov_pi)(x); infinite unless cov_nu < cov_pi.

    The log-ratio is a concave quadratic when cov_pi - cov_nu is positive
    definite; its maximum is found in closed form.
    """
    mn = np.atleast_1d(np.asarray(mean_nu, dtype=float))
    mp = np.atleast_1d(np.asarray(mean_pi, dtype=float))
    cn = np.atleast_2d(np.asarray(cov_nu, dtype=float))
    cp = np.atleast_2d(np.asarray(cov_pi, dtype=float))
    gap = np.linalg.inv(cn) - np.linalg.inv(cp)
    if np.linalg.eigvalsh(0.5 * (gap + gap.T))[0] <= 0:
        return math.inf
    _, ldn = np.linalg.slogdet(cn)
    _, ldp = np.linalg.slogdet(cp)
    # log ratio = 0.5 (ldp - ldn) - 0.5 (x-mn)' Cn^-1 (x-mn) + 0.5 (x-mp)' Cp^-1 (x-mp)
    # its maximum equals 0.5 (ldp - ldn) + 0.5 dm' (Cp - Cn)^-1 dm with dm = mn - mp
    dm = mn - mp
    quad = float(dm @ np.linalg.solve(cp - cn, dm))
    return math.exp(0.5 * (ldp - ldn) + 0.5 * quad)
