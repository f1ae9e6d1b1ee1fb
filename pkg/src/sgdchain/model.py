"""Problem instances: objectives, gradient-noise models, regularity constants.

A problem is a pair ``(ProblemSpec, NoiseModel)``.  The ``ProblemSpec`` carries the
objective and every constant the step-size conditions and bounds need; the
noise model says how a stochastic gradient ``G(theta) = grad L(theta) + eps``
is drawn.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any

import numpy as np
from scipy import optimize, special

SQRT3 = math.sqrt(3.0)
GH_ORDER = 64


class ObjectiveKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    LEAST_SQUARES = "least_squares_random_design"
    LOGISTIC_BALL = "logistic_ball"


class NoiseKind(str, enum.Enum):
    ADDITIVE_GAUSSIAN = "additive_gaussian"
    ADDITIVE_STUDENT_T = "additive_student_t"
    RANDOM_DESIGN_GAUSSIAN = "random_design_gaussian"
    RANDOM_DESIGN_BOUNDED = "random_design_bounded"


ADDITIVE_KINDS = (NoiseKind.ADDITIVE_GAUSSIAN, NoiseKind.ADDITIVE_STUDENT_T)
DESIGN_KINDS = (NoiseKind.RANDOM_DESIGN_GAUSSIAN, NoiseKind.RANDOM_DESIGN_BOUNDED)


class DomainError(ValueError):
    """Parameter outside the domain of the objective, or a shape mismatch."""


def _as_matrix(a, d: int, name: str) -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.ndim == 0:
        m = m * np.eye(d)
    if m.shape != (d, d):
        raise DomainError(f"{name} must be {d}x{d}, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=1e-12, atol=1e-14):
        raise DomainError(f"{name} must be symmetric")
    return 0.5 * (m + m.T)


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root, clamping rounding-level negative eigenvalues."""
    w, v = np.linalg.eigh(m)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise DomainError("matrix is not positive semi-definite")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Gradient-noise distribution.

    Additive kinds add ``xi`` independent of theta.  Random-design kinds draw a
    covariate ``X`` with ``E[X X^T] = design_cov`` and a label noise ``w``, giving
    ``eps(theta) = (X X^T - design_cov)(theta - theta*) - label_std * w * X``.
    """

    kind: NoiseKind
    dim: int
    cov: np.ndarray | None = None
    df: float | None = None
    scale: float | None = None
    design_cov: np.ndarray | None = None
    label_std: float = 0.0

    @classmethod
    def additive_gaussian(cls, cov) -> "NoiseModel":
        c = np.atleast_2d(np.array(cov, dtype=float))
        c = _as_matrix(c, c.shape[0], "noise covariance")
        psd_sqrt(c)
        return cls(NoiseKind.ADDITIVE_GAUSSIAN, c.shape[0], cov=c)

    @classmethod
    def student_t(cls, df: float, scale: float, dim: int) -> "NoiseModel":
        if df <= 0 or scale < 0:
            raise DomainError("student-t noise needs df > 0 and scale >= 0")
        return cls(NoiseKind.ADDITIVE_STUDENT_T, int(dim), df=float(df), scale=float(scale))

    @classmethod
    def random_design(cls, design_cov, label_std: float, bounded: bool = False) -> "NoiseModel":
        c = np.atleast_2d(np.array(design_cov, dtype=float))
        c = _as_matrix(c, c.shape[0], "design covariance")
        psd_sqrt(c)
        if label_std < 0:
            raise DomainError("label_std must be nonnegative")
        kind = NoiseKind.RANDOM_DESIGN_BOUNDED if bounded else NoiseKind.RANDOM_DESIGN_GAUSSIAN
        return cls(kind, c.shape[0], design_cov=c, label_std=float(label_std))

    @property
    def is_additive(self) -> bool:
        return self.kind in ADDITIVE_KINDS

    @property
    def support_bound(self) -> float | None:
        """Almost-sure bound on ``||X||`` for the bounded design, else None."""
        if self.kind is not NoiseKind.RANDOM_DESIGN_BOUNDED:
            return None
        return SQRT3 * math.sqrt(self.dim * np.linalg.eigvalsh(self.design_cov)[-1])

    @property
    def params(self) -> dict[str, Any]:
        if self.kind is NoiseKind.ADDITIVE_GAUSSIAN:
            return {"cov": self.cov.tolist()}
        if self.kind is NoiseKind.ADDITIVE_STUDENT_T:
            return {"df": self.df, "scale": self.scale}
        return {"design_cov": self.design_cov.tolist(), "label_std": self.label_std}

    @property
    def finite_moments(self) -> float:
        """Supremum of finite absolute moment orders of the noise."""
        if self.kind is NoiseKind.ADDITIVE_STUDENT_T:
            return self.df
        return math.inf

    @lru_cache(maxsize=None)
    def _root(self) -> np.ndarray:
        return psd_sqrt(self.cov if self.cov is not None else self.design_cov)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    dim: int
    objective: ObjectiveKind
    theta_star: np.ndarray
    sigma_matrix: np.ndarray
    mu: float
    big_l: float
    l_sigma: float = 0.0
    sigma_sq: float = 0.0
    l_w: float | None = None
    k_bar: float | None = None
    k_lip: float | None = None
    ball_radius: float | None = None
    # sub-exponential norm constant, for the Psi1 variant of the norm radius
    k_bar_psi1: float | None = None
    seed: int = 0
    constant_sources: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise DomainError("dim must be positive")
        ts = np.array(self.theta_star, dtype=float).reshape(-1)
        if ts.shape != (d,):
            raise DomainError(f"theta_star must have length {d}")
        object.__setattr__(self, "objective", ObjectiveKind(self.objective))
        object.__setattr__(self, "theta_star", ts)
        object.__setattr__(self, "sigma_matrix", _as_matrix(self.sigma_matrix, d, "sigma_matrix"))
        if not (self.mu > 0 and self.big_l >= self.mu):
            raise DomainError(f"need 0 < mu <= L, got mu={self.mu}, L={self.big_l}")
        if self.l_sigma < 0 or self.sigma_sq < 0:
            raise DomainError("l_sigma and sigma_sq must be nonnegative")
        if np.linalg.eigvalsh(self.sigma_matrix)[0] <= 0:
            raise DomainError("sigma_matrix must be positive definite")
        if self.objective is ObjectiveKind.LOGISTIC_BALL:
            if self.ball_radius is None or self.ball_radius <= 0:
                raise DomainError("logistic_ball needs a positive ball_radius")
            if np.linalg.norm(ts) > self.ball_radius:
                raise DomainError("theta_star must lie inside the ball")
        elif self.linear:
            w = np.linalg.eigvalsh(self.sigma_matrix)
            if not (math.isclose(self.mu, w[0], rel_tol=1e-9) and math.isclose(self.big_l, w[-1], rel_tol=1e-9)):
                raise DomainError(
                    f"mu and L must equal the extreme eigenvalues of sigma_matrix ({w[0]:.12g}, {w[-1]:.12g})"
                )

    @property
    def linear(self) -> bool:
        """Gradient is exactly Sigma (theta - theta*)."""
        return self.objective in (ObjectiveKind.QUADRATIC, ObjectiveKind.LEAST_SQUARES)

    def summary(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "objective": self.objective.value,
            "mu": self.mu,
            "L": self.big_l,
            "l_sigma": self.l_sigma,
            "sigma_sq": self.sigma_sq,
            "l_w": self.l_w,
            "k_bar": self.k_bar,
            "k_lip": self.k_lip,
            "ball_radius": self.ball_radius,
            "constant_sources": dict(sorted(self.constant_sources.items())),
        }


def check_compatible(spec: ProblemSpec, noise: NoiseModel) -> None:
    if noise.dim != spec.dim:
        raise DomainError(f"noise dimension {noise.dim} != problem dimension {spec.dim}")
    if spec.objective is ObjectiveKind.LEAST_SQUARES:
        if noise.kind not in DESIGN_KINDS:
            raise DomainError("least-squares objective needs a random-design noise model")
        if not np.allclose(noise.design_cov, spec.sigma_matrix, rtol=1e-12, atol=1e-14):
            raise DomainError("least-squares design covariance must equal sigma_matrix")
    if spec.objective is ObjectiveKind.LOGISTIC_BALL:
        if noise.kind is NoiseKind.RANDOM_DESIGN_BOUNDED:
            raise DomainError("logistic objective supports Gaussian design only")
        if noise.kind is NoiseKind.RANDOM_DESIGN_GAUSSIAN and not np.allclose(
            noise.design_cov, spec.sigma_matrix, rtol=1e-12, atol=1e-14
        ):
            raise DomainError("logistic design covariance must equal sigma_matrix")


# ---------------------------------------------------------------- gradients


def _check_theta(spec: ProblemSpec, theta) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    if th.shape[-1:] != (spec.dim,):
        raise DomainError(f"theta must have trailing dimension {spec.dim}, got shape {th.shape}")
    if spec.ball_radius is not None and spec.objective is ObjectiveKind.LOGISTIC_BALL:
        r = np.sqrt((th * th).sum(-1))
        if np.any(r > spec.ball_radius * (1 + 1e-12)):
            raise DomainError("theta lies outside the ball domain")
    return th


def _linear_grad(sigma: np.ndarray, delta: np.ndarray) -> np.ndarray:
    # elementwise row products keep each row's result independent of batch size
    return (delta[..., None, :] * sigma).sum(-1)


@lru_cache(maxsize=None)
def _gh(order: int = GH_ORDER):
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / w.sum()


def _sigmoid(x):
    return special.expit(x)


def _logistic_population_grad(spec: ProblemSpec, theta: np.ndarray) -> np.ndarray:
    """E[X (sigmoid(X.theta) - sigmoid(X.theta*))] for X ~ N(0, Sigma).

    The integrand depends on X only through the plane spanned by the whitened
    theta and theta*, so a tensor Gauss-Hermite rule in that plane is exact up
    to quadrature error.
    """
    root = psd_sqrt(spec.sigma_matrix)
    flat = theta.reshape(-1, spec.dim)
    a = flat @ root
    b = root @ spec.theta_star
    nb = np.linalg.norm(b)
    out = np.empty_like(flat)
    x, w = _gh()
    z1, z2 = np.meshgrid(x, x, indexing="ij")
    ww = np.outer(w, w)
    for i, ai in enumerate(a):
        na = np.linalg.norm(ai)
        if nb > 0:
            e1 = b / nb
        elif na > 0:
            e1 = ai / na
        else:
            out[i] = 0.0
            continue
        a1 = ai @ e1
        resid = ai - a1 * e1
        nr = np.linalg.norm(resid)
        e2 = resid / nr if nr > 1e-14 * max(na, nb) else np.zeros_like(e1)
        a2 = ai @ e2
        h = _sigmoid(z1 * a1 + z2 * a2) - _sigmoid(z1 * nb)
        m1 = (ww * z1 * h).sum()
        m2 = (ww * z2 * h).sum()
        out[i] = root @ (m1 * e1 + m2 * e2)
    return out.reshape(theta.shape)


def gradient(spec: ProblemSpec, theta) -> np.ndarray:
    """Population gradient ``grad L(theta)``.

    Exact for the linear objectives.  For the logistic objective it is the
    64-point Gauss-Hermite value (see ``gradient_is_exact``).
    """
    th = _check_theta(spec, theta)
    if spec.linear:
        return _linear_grad(spec.sigma_matrix, th - spec.theta_star)
    return _logistic_population_grad(spec, th)


def gradient_is_exact(spec: ProblemSpec) -> bool:
    return spec.linear


def logistic_loss(spec: ProblemSpec, theta) -> float:
    """Population log-loss by Gauss-Hermite quadrature (used for gradient checks)."""
    th = _check_theta(spec, theta)
    root = psd_sqrt(spec.sigma_matrix)
    a = root @ th
    b = root @ spec.theta_star
    basis, _ = np.linalg.qr(np.stack([b, a], axis=1) if spec.dim > 1 else np.array([[1.0]]))
    ca = basis.T @ a
    cb = basis.T @ b
    x, w = _gh()
    if basis.shape[1] == 1:
        za, zb, ww = x * ca[0], x * cb[0], w
    else:
        z1, z2 = np.meshgrid(x, x, indexing="ij")
        za = z1 * ca[0] + z2 * ca[1]
        zb = z1 * cb[0] + z2 * cb[1]
        ww = np.outer(w, w)
    p = _sigmoid(zb)
    loss = p * np.logaddexp(0.0, -za) + (1 - p) * np.logaddexp(0.0, za)
    return float((ww * loss).sum())


def logistic_hessian(sigma_matrix, theta) -> np.ndarray:
    """E[X X^T s'(X.theta)] with s' = sigmoid (1 - sigmoid), X ~ N(0, sigma)."""
    sigma = np.asarray(sigma_matrix, dtype=float)
    root = psd_sqrt(sigma)
    a = root @ np.asarray(theta, dtype=float)
    na = np.linalg.norm(a)
    c0, c2 = _logistic_curvatures(na)
    d = sigma.shape[0]
    if na > 0:
        u = a / na
        inner = c0 * (np.eye(d) - np.outer(u, u)) + c2 * np.outer(u, u)
    else:
        inner = c0 * np.eye(d)
    return root @ inner @ root


def _logistic_curvatures(r: float) -> tuple[float, float]:
    x, w = _gh()
    s = _sigmoid(r * x)
    sp = s * (1 - s)
    return float((w * sp).sum()), float((w * x * x * sp).sum())


def logistic_constants(sigma_matrix, ball_radius: float) -> tuple[float, float]:
    """(mu, L) for the logistic objective on the ball of radius R.

    L = lambda_max(Sigma)/4 is attained at theta = 0.  Both curvature factors are
    decreasing in ``||Sigma^{1/2} theta||``, so evaluating them at the largest
    whitened radius gives a valid strong-convexity constant over the ball.
    """
    w = np.linalg.eigvalsh(np.asarray(sigma_matrix, dtype=float))
    c0, c2 = _logistic_curvatures(ball_radius * math.sqrt(w[-1]))
    return float(w[0] * min(c0, c2)), float(w[-1] / 4.0)


# ---------------------------------------------------------------- noise draws


def draw_noise(spec: ProblemSpec, noise: NoiseModel, rng: np.random.Generator, shape: tuple[int, ...]) -> dict:
    """Raw noise variables for ``shape`` gradient draws (last axis is the coordinate)."""
    d = spec.dim
    kind = noise.kind
    if kind is NoiseKind.ADDITIVE_GAUSSIAN:
        z = rng.standard_normal(shape + (d,))
        return {"eps": (z[..., None, :] * noise._root()).sum(-1)}
    if kind is NoiseKind.ADDITIVE_STUDENT_T:
        return {"eps": noise.scale * rng.standard_t(noise.df, shape + (d,))}
    if kind is NoiseKind.RANDOM_DESIGN_GAUSSIAN:
        z = rng.standard_normal(shape + (d,))
    else:
        z = rng.uniform(-SQRT3, SQRT3, shape + (d,))
    x = (z[..., None, :] * noise._root()).sum(-1)
    if spec.objective is ObjectiveKind.LOGISTIC_BALL:
        return {"x": x, "u": rng.random(shape)}
    return {"x": x, "w": rng.standard_normal(shape)}


def stochastic_gradient(spec: ProblemSpec, noise: NoiseModel, theta: np.ndarray, draws: dict) -> np.ndarray:
    """G(theta, zeta) for broadcast-compatible ``theta`` and ``draws``."""
    delta = theta - spec.theta_star
    if noise.is_additive:
        if spec.linear:
            return _linear_grad(spec.sigma_matrix, delta) + draws["eps"]
        shape = np.broadcast_shapes(theta.shape, draws["eps"].shape)
        return _logistic_population_grad(spec, np.broadcast_to(theta, shape).copy()) + draws["eps"]
    x = draws["x"]
    if spec.objective is ObjectiveKind.LOGISTIC_BALL:
        y = draws["u"] < _sigmoid((x * spec.theta_star).sum(-1))
        return x * (_sigmoid((x * theta).sum(-1)) - y)[..., None]
    xd = (x * delta).sum(-1)[..., None]
    grad = _linear_grad(spec.sigma_matrix, delta)
    return grad + x * xd - _linear_grad(noise.design_cov, delta) - noise.label_std * draws["w"][..., None] * x


def minibatch_gradient(spec: ProblemSpec, noise: NoiseModel, theta: np.ndarray, draws: dict) -> np.ndarray:
    """Average of N gradient draws for a block of chains.

    ``theta`` has shape (B, K, d) (K chains per replica share the same draws,
    which is the synchronous coupling) and each draw array has shape (B, N, ...).
    Only elementwise operations and last-axis sums are used, so every replica's
    result is independent of how many replicas share the block.
    """
    if noise.is_additive:
        eps = draws["eps"][:, None].mean(axis=2)
        if spec.linear:
            return _linear_grad(spec.sigma_matrix, theta - spec.theta_star) + eps
        return _logistic_population_grad(spec, theta) + eps
    local = {k: v[:, None] for k, v in draws.items()}
    return stochastic_gradient(spec, noise, theta[:, :, None, :], local).mean(axis=2)


def sample_gradient(spec: ProblemSpec, noise: NoiseModel, theta, rng: np.random.Generator) -> np.ndarray:
    """One unbiased draw of the stochastic gradient at ``theta``."""
    check_compatible(spec, noise)
    th = _check_theta(spec, theta)
    if th.ndim != 1:
        raise DomainError("sample_gradient takes a single parameter vector")
    draws = draw_noise(spec, noise, rng, (1,))
    return minibatch_gradient(spec, noise, th[None, None, :], {k: v[None] for k, v in draws.items()})[0, 0]


def noise_sample(spec: ProblemSpec, noise: NoiseModel, theta, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` draws of eps(theta) = G(theta) - grad L(theta), shape (n, d)."""
    th = _check_theta(spec, theta)
    draws = draw_noise(spec, noise, rng, (n,))
    return stochastic_gradient(spec, noise, np.broadcast_to(th, (n, spec.dim)), draws) - gradient(spec, th)


# ---------------------------------------------------------------- step sizes


@dataclass(frozen=True)
class StepCondition:
    condition_id: str
    threshold: float
    admissible: bool
    strict: bool
    description: str


@dataclass(frozen=True)
class StepSizeReport:
    beta: float
    conditions: tuple[StepCondition, ...]

    def __getitem__(self, condition_id: str) -> StepCondition:
        for c in self.conditions:
            if c.condition_id == condition_id:
                return c
        raise KeyError(condition_id)

    def __contains__(self, condition_id: str) -> bool:
        return any(c.condition_id == condition_id for c in self.conditions)

    def admissible(self, condition_id: str) -> bool:
        return self[condition_id].admissible

    def failures(self) -> list[StepCondition]:
        return [c for c in self.conditions if not c.admissible]


def _cond(cid: str, beta: float, threshold: float, strict: bool, desc: str) -> StepCondition:
    ok = beta < threshold if strict else beta <= threshold
    return StepCondition(cid, float(threshold), bool(ok), strict, desc)


def validate_step_size(spec: ProblemSpec, beta: float, j: int | None = None, lp_growth: float | None = None) -> StepSizeReport:
    """Evaluate every step-size admissibility condition at ``beta``.

    ``lp_growth`` is the constant K in ``|| ||eps(theta)|| ||_Lp <= K ||theta - theta*|| + K0``
    used by the finite-moment condition; it defaults to ``sqrt(l_sigma)``, which
    is exact for additive noise (K = 0).
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    mu, big_l, ls = spec.mu, spec.big_l, spec.l_sigma
    conds = [
        _cond("ergodicity", beta, 2 * mu / (mu**2 + max(mu * big_l, ls)), True,
              "beta < 2 mu / (mu^2 + max(mu L, L_sigma))"),
        _cond("gradient_step_contraction", beta, 2 / (mu + big_l), False, "beta <= 2 / (mu + L)"),
        _cond("dimension_free_last_iterate", beta, mu / (mu**2 + ls), False, "beta <= mu / (mu^2 + L_sigma)"),
        _cond("subexp_norm_transfer", beta, 1 / (2 * mu), False, "beta <= 1 / (2 mu)"),
    ]
    if spec.l_w is not None:
        lw = spec.l_w
        w_thr = 2 * mu / (mu**2 + max(lw, mu * big_l))
        conds.append(_cond("wasserstein_contraction", beta, w_thr, True, "beta < 2 mu / (mu^2 + max(L_W, mu L))"))
        conds.append(_cond("tail_average", beta, min(w_thr, mu / (mu**2 + ls)), True,
                           "beta < min(2 mu / (mu^2 + max(mu L, L_W)), mu / (mu^2 + L_sigma))"))
    if j is not None:
        k = math.sqrt(ls) if lp_growth is None else float(lp_growth)
        conds.append(_cond("finite_moments", beta, mu / (j * (mu**2 + k**2)), False,
                           f"beta <= mu / (j (mu^2 + K^2)) with j={j}, K={k:.6g}"))
    return StepSizeReport(float(beta), tuple(conds))


def minibatch_conditions(spec: ProblemSpec, beta: float, batch: int, horizon: int, delta: float,
                         radius: float, k_xi_mat: float, k_xi_vec: float) -> StepSizeReport:
    """Batch-size and step-size conditions for bounded minibatch trajectories."""
    mu, big_l, d = spec.mu, spec.big_l, spec.dim
    level = math.log(4 * horizon / delta) + 3 * d
    need = max(1.0, ((6 / mu) * max(3 * k_xi_mat, 4 * k_xi_vec / radius)) ** 2)
    batch_ok = batch / level >= need
    conds = (
        StepCondition("minibatch_size", need * level, bool(batch_ok), False,
                      "N / (log(4T/delta) + 3d) >= max(1, ((6/mu) max(3 K_Xi, 4 K_xi / C))^2)"),
        _cond("minibatch_step", beta, min(mu * batch / (54 * k_xi_mat**2 * level) if k_xi_mat > 0 else math.inf,
                                          2 / (mu + big_l)), False,
              "beta <= min(mu N / (54 K_Xi^2 (log(4T/delta) + 3d)), 2 / (mu + L))"),
    )
    return StepSizeReport(float(beta), conds)


# ---------------------------------------------------------------- constants


def gaussian_norm_psi2_tilde(cov) -> float:
    """Exact sub-Gaussian (squared-MGF form) constant of ||xi||, xi ~ N(0, cov).

    E exp(l^2 ||xi||^2) = prod (1 - 2 l^2 c_i)^(-1/2); its log is convex in l^2,
    so the condition only needs checking at l = 1/K.
    """
    c = np.linalg.eigvalsh(np.atleast_2d(np.asarray(cov, dtype=float)))
    c = c[c > 0]
    if c.size == 0:
        return 0.0

    def excess(k2):
        return -0.5 * np.log1p(-2 * c / k2).sum() - 1.0

    lo = 2 * c.max() * (1 + 1e-15)
    hi = 2 * c.max() + 2 * c.sum() + 1.0
    while excess(hi) > 0:
        hi *= 2
    return math.sqrt(optimize.brentq(excess, lo * (1 + 1e-12), hi, xtol=1e-14, rtol=1e-13))


def gaussian_lipschitz_constant(cov) -> float:
    """K with f(xi) - Ef(xi) sub-Gaussian(K) for every 1-Lipschitz f, xi ~ N(m, cov).

    Gaussian concentration gives E exp(l (f - Ef)) <= exp(l^2 ||cov||_2 / 2).
    """
    return math.sqrt(max(np.linalg.eigvalsh(np.atleast_2d(np.asarray(cov, dtype=float)))[-1], 0.0) / 2)


def gaussian_norm_psi1_tilde(cov, p_max: int = 64) -> float:
    """max_p ||(||xi||)||_Lp / p for Gaussian xi, using exact chi moments when isotropic
    and a Monte-Carlo-free bound otherwise (Lp norm of ||xi|| <= sqrt(tr) * Lp of |N(0,1)| scaling)."""
    c = np.linalg.eigvalsh(np.atleast_2d(np.asarray(cov, dtype=float)))
    lam = max(c[-1], 0.0)
    d = len(c)
    if lam == 0:
        return 0.0
    best = 0.0
    for p in range(1, p_max + 1):
        # ||xi|| <= sqrt(lam) * chi_d; E chi_d^p = 2^(p/2) Gamma((d+p)/2) / Gamma(d/2)
        logm = 0.5 * p * math.log(2) + special.gammaln((d + p) / 2) - special.gammaln(d / 2)
        best = max(best, math.sqrt(lam) * math.exp(logm / p) / p)
    return best


def random_design_psi1_constants(design_cov, label_std: float) -> tuple[float, float]:
    """Certified sub-exponential (MGF form) constants (K_Xi, K_xi) for Gaussian design.

    <u, (XX^T - D) u> = s^2 (Z^2 - 1) with s^2 = u^T D u, and <u, w X> = s * Z * W.
    For each, log-MGF / l^2 is increasing in |l|, so the condition reduces to one
    scalar equation at l = 1/K, solved to machine precision.
    """
    lam = float(np.linalg.eigvalsh(np.atleast_2d(np.asarray(design_cov, dtype=float)))[-1])

    def chi(kappa):
        x = 1.0 / kappa
        return -x - 0.5 * math.log1p(-2 * x) - 1.0

    def prod(kappa):
        return -0.5 * math.log1p(-1.0 / kappa**2) - 1.0

    k_mat = optimize.brentq(chi, 2.0 + 1e-12, 100.0, xtol=1e-15)
    k_vec = optimize.brentq(prod, 1.0 + 1e-12, 100.0, xtol=1e-15)
    return k_mat * lam, k_vec * math.sqrt(lam) * label_std


def estimate_design_operator_moment(design_cov, rng: np.random.Generator, n: int = 100_000,
                                    bounded: bool = False) -> tuple[float, float]:
    """Monte-Carlo E ||X X^T - D||_2^2 and its standard error."""
    d_cov = np.atleast_2d(np.asarray(design_cov, dtype=float))
    d = d_cov.shape[0]
    root = psd_sqrt(d_cov)
    vals = np.empty(n)
    step = max(1, 2_000_000 // (d * d))
    for s in range(0, n, step):
        m = min(step, n - s)
        z = rng.uniform(-SQRT3, SQRT3, (m, d)) if bounded else rng.standard_normal((m, d))
        x = z @ root
        xi = x[:, :, None] * x[:, None, :] - d_cov
        ev = np.linalg.eigvalsh(xi)
        vals[s:s + m] = np.maximum(np.abs(ev[:, 0]), np.abs(ev[:, -1])) ** 2
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def make_spec(objective, theta_star, sigma_matrix, noise: NoiseModel, *, ball_radius: float | None = None,
              mu: float | None = None, big_l: float | None = None, k_bar: float | None = None,
              k_lip: float | None = None, k_bar_psi1: float | None = None, l_sigma: float | None = None,
              sigma_sq: float | None = None, l_w: float | None = None, seed: int = 0,
              mc_draws: int = 100_000) -> ProblemSpec:
    """Build a spec, filling in every constant the caller did not supply.

    Each filled constant is labelled in ``constant_sources`` as ``closed_form``
    or ``monte_carlo(...)``; supplied ones are labelled ``user``.
    """
    objective = ObjectiveKind(objective)
    ts = np.array(theta_star, dtype=float).reshape(-1)
    d = ts.size
    sigma = _as_matrix(sigma_matrix, d, "sigma_matrix")
    src: dict[str, str] = {}

    def pick(name, given, compute, how):
        if given is not None:
            src[name] = "user"
            return float(given)
        val = compute()
        if val is not None:
            src[name] = how
        return val

    w = np.linalg.eigvalsh(sigma)
    if objective is ObjectiveKind.LOGISTIC_BALL:
        if ball_radius is None or not ball_radius > 0:
            raise DomainError("logistic objective needs a positive ball_radius")
        lc = logistic_constants(sigma, ball_radius)
        mu = pick("mu", mu, lambda: lc[0], "closed_form")
        big_l = pick("L", big_l, lambda: lc[1], "closed_form")
    else:
        mu = pick("mu", mu, lambda: float(w[0]), "closed_form")
        big_l = pick("L", big_l, lambda: float(w[-1]), "closed_form")

    kind = noise.kind
    rng = np.random.Generator(np.random.Philox(key=[seed & ((1 << 64) - 1), 0xC0FFEE]))
    mc_cache: dict[str, tuple[float, float]] = {}

    def design_moment():
        if "m" not in mc_cache:
            mc_cache["m"] = estimate_design_operator_moment(
                noise.design_cov, rng, mc_draws, bounded=kind is NoiseKind.RANDOM_DESIGN_BOUNDED)
        return mc_cache["m"]

    if kind is NoiseKind.ADDITIVE_GAUSSIAN:
        ls_c, ss_c, lw_c = (lambda: 0.0), (lambda: float(np.trace(noise.cov))), (lambda: 0.0)
        how_ls = how_lw = "closed_form"
        kb_c = lambda: gaussian_norm_psi2_tilde(noise.cov)
        kl_c = lambda: gaussian_lipschitz_constant(noise.cov)
        kb1_c = lambda: gaussian_norm_psi1_tilde(noise.cov)
    elif kind is NoiseKind.ADDITIVE_STUDENT_T:
        nu = noise.df
        ls_c = lambda: 0.0
        ss_c = lambda: (d * noise.scale**2 * nu / (nu - 2)) if nu > 2 else math.inf
        lw_c = lambda: 0.0
        how_ls = how_lw = "closed_form"
        kb_c = kl_c = kb1_c = lambda: None
    elif objective is ObjectiveKind.LOGISTIC_BALL:
        # ||G|| <= ||X||, and G(theta) - G(theta') = X (s(X.theta) - s(X.theta')) under a shared draw
        ls_c = lambda: 0.0
        ss_c = lambda: float(np.trace(sigma))
        lw_c = lambda: float(np.linalg.eigvalsh(2 * sigma @ sigma + np.trace(sigma) * sigma)[-1] / 16)
        how_ls = how_lw = "closed_form"
        kb_c = kl_c = kb1_c = lambda: None
    else:
        ls_c = lambda: design_moment()[0]
        ss_c = lambda: noise.label_std**2 * float(np.trace(noise.design_cov))
        lw_c = lambda: design_moment()[0]
        how_ls = how_lw = f"monte_carlo(n={mc_draws})"
        kb_c = kl_c = kb1_c = lambda: None

    l_sigma = pick("l_sigma", l_sigma, ls_c, how_ls)
    sigma_sq = pick("sigma_sq", sigma_sq, ss_c, "closed_form")
    l_w = pick("l_w", l_w, lw_c, how_lw)
    if "m" in mc_cache:
        src["monte_carlo_stderr"] = f"{mc_cache['m'][1]:.6g}"
    k_bar = pick("k_bar", k_bar, kb_c, "closed_form")
    k_lip = pick("k_lip", k_lip, kl_c, "closed_form")
    k_bar_psi1 = pick("k_bar_psi1", k_bar_psi1, kb1_c, "closed_form")
    spec = ProblemSpec(d, objective, ts, sigma, mu, big_l, l_sigma, sigma_sq, l_w, k_bar, k_lip,
                       ball_radius, k_bar_psi1, seed, src)
    check_compatible(spec, noise)
    return spec


def with_constants(spec: ProblemSpec, source: str = "user", **changes) -> ProblemSpec:
    """Copy of ``spec`` with some constants replaced and labelled."""
    src = dict(spec.constant_sources)
    for k in changes:
        src[k] = source
    return replace(spec, constant_sources=src, **changes)


def estimate_k_bar(spec: ProblemSpec, noise: NoiseModel, rng: np.random.Generator, n: int = 100_000,
                   thetas=None):
    """Monte-Carlo sub-Gaussian constant of ||eps(theta)||, maximised over ``thetas``.

    Returns the largest ConcentrationEstimate; default probes only theta*.
    """
    from .diagnostics.estimators import estimate_psi2_tilde

    if noise.kind is NoiseKind.ADDITIVE_STUDENT_T:
        raise DomainError("concentration constants are undefined for heavy-tailed noise")
    probes = [spec.theta_star] if thetas is None else list(thetas)
    best = None
    for th in probes:
        eps = noise_sample(spec, noise, th, rng, n)
        est = estimate_psi2_tilde(np.sqrt((eps * eps).sum(-1)))
        if best is None or est.constant > best.constant:
            best = est
    return best


# ---------------------------------------------------------------- serialization

SPEC_KEYS = ("dim", "objective", "theta_star", "sigma_matrix", "mu", "L", "l_sigma", "sigma_sq", "l_w",
             "k_bar", "k_lip", "k_bar_psi1", "ball_radius", "seed")


def problem_to_dict(spec: ProblemSpec, noise: NoiseModel) -> dict[str, Any]:
    return {
        "dim": spec.dim,
        "objective": spec.objective.value,
        "theta_star": spec.theta_star.tolist(),
        "sigma_matrix": spec.sigma_matrix.tolist(),
        "mu": spec.mu,
        "L": spec.big_l,
        "l_sigma": spec.l_sigma,
        "sigma_sq": spec.sigma_sq,
        "l_w": spec.l_w,
        "k_bar": spec.k_bar,
        "k_lip": spec.k_lip,
        "k_bar_psi1": spec.k_bar_psi1,
        "ball_radius": spec.ball_radius,
        "seed": spec.seed,
        "constant_sources": dict(sorted(spec.constant_sources.items())),
        "noise": {"kind": noise.kind.value, "params": noise.params},
    }


def noise_from_dict(d: dict[str, Any], dim: int) -> NoiseModel:
    kind = NoiseKind(d["kind"])
    params = d.get("params") or {}
    if kind is NoiseKind.ADDITIVE_GAUSSIAN:
        cov = params["cov"]
        if np.ndim(cov) == 0:
            cov = float(cov) * np.eye(dim)
        return NoiseModel.additive_gaussian(cov)
    if kind is NoiseKind.ADDITIVE_STUDENT_T:
        return NoiseModel.student_t(params["df"], params["scale"], dim)
    cov = params["design_cov"]
    if np.ndim(cov) == 0:
        cov = float(cov) * np.eye(dim)
    return NoiseModel.random_design(cov, params.get("label_std", 0.0), bounded=kind is NoiseKind.RANDOM_DESIGN_BOUNDED)


def problem_from_dict(d: dict[str, Any]) -> tuple[ProblemSpec, NoiseModel]:
    """Inverse of ``problem_to_dict``; absent constants are derived."""
    dim = int(d["dim"])
    noise = noise_from_dict(d["noise"], dim)
    sigma = d["sigma_matrix"]
    if np.ndim(sigma) == 0:
        sigma = float(sigma) * np.eye(dim)
    spec = make_spec(
        d["objective"], d["theta_star"], sigma, noise,
        ball_radius=d.get("ball_radius"), mu=d.get("mu"), big_l=d.get("L"), k_bar=d.get("k_bar"),
        k_lip=d.get("k_lip"), k_bar_psi1=d.get("k_bar_psi1"), l_sigma=d.get("l_sigma"),
        sigma_sq=d.get("sigma_sq"), l_w=d.get("l_w"), seed=int(d.get("seed", 0)),
    )
    if d.get("constant_sources"):
        merged = dict(spec.constant_sources)
        merged.update(d["constant_sources"])
        spec = replace(spec, constant_sources=merged)
    return spec, noise


def dump_problem(spec: ProblemSpec, noise: NoiseModel, path) -> None:
    import yaml

    with open(path, "w") as fh:
        yaml.safe_dump(problem_to_dict(spec, noise), fh, sort_keys=False)


def load_problem(path) -> tuple[ProblemSpec, NoiseModel]:
    import yaml

    with open(path) as fh:
        return problem_from_dict(yaml.safe_load(fh))


def spec_id(spec: ProblemSpec, noise: NoiseModel) -> str:
    """Short content hash identifying a problem."""
    import hashlib
    import json

    blob = json.dumps(problem_to_dict(spec, noise), sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
