"""Registry of verified claims: every BoundCheck's ``claim_id`` resolves here.

Each entry names the statement being checked and the formula of its bound.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Claim:
    claim_id: str
    title: str
    formula: str
    kind: str  # "bound", "equality", "rate" or "property"


_CLAIMS = [
    Claim("stationary_variance_bound", "Stationary second moment about the optimum",
          "E||theta - theta*||^2 <= beta sigma^2 / (2 mu - beta (mu^2 + L_sigma))", "bound"),
    Claim("stationary_bias_bound", "Bias of the stationary mean",
          "||E theta - theta*|| <= sqrt(beta sigma^2 / (2 mu - beta (mu^2 + L_sigma)))", "bound"),
    Claim("linear_mean_unbiased", "Stationary mean equals the optimum for linear gradients",
          "E theta = theta*  (per-coordinate z-score <= 4)", "equality"),
    Claim("norm_subgaussian_transfer", "Sub-Gaussian norm transfers to the stationary law",
          "||theta - theta*|| in Psi2~(Kbar sqrt(8 beta / mu))", "bound"),
    Claim("norm_subexp_transfer", "Sub-exponential norm transfers to the stationary law",
          "||theta - theta*|| in Psi1~(2 Kbar sqrt(beta / mu)) when beta <= 1/(2 mu)", "bound"),
    Claim("lipschitz_subgaussian_transfer", "Lipschitz functionals of the stationary law are sub-Gaussian",
          "f(theta) - E f(theta) in Psi2(K sqrt(beta / mu)) for 1-Lipschitz f", "bound"),
    Claim("sqrt_beta_scaling", "Concentration constants scale as sqrt(beta)",
          "slope of log K_hat on log beta in [0.4, 0.6]", "rate"),
    Claim("quantile_subgaussian", "Sub-Gaussian quantile bound",
          "P(|X| > K sqrt(log(e/delta))) <= delta for X in Psi2~(K)", "bound"),
    Claim("quantile_subexp", "Sub-exponential quantile bound",
          "P(|X| > 2 e K log(2/delta)) <= delta for X in Psi1~(K)", "bound"),
    Claim("finite_moments_stability", "Finite moments under a reduced step size",
          "M_j stable under sample doubling (< 10%) when beta <= mu / (j (mu^2 + K^2))", "property"),
    Claim("heavy_moment_divergence", "Moments beyond the noise tail index do not stabilise",
          "M_q for q > tail index grows with n or is dominated by its largest term", "property"),
    Claim("coupling_contraction", "Synchronous coupling contracts in mean square",
          "mean D_{t+1} / mean D_t <= (1 - beta mu)^2 + beta^2 L_W", "bound"),
    Claim("coupling_contraction_geometric", "Geometric-mean contraction over the whole run",
          "(mean D_T / mean D_0)^(1/T) <= (1 - beta mu)^2 + beta^2 L_W", "bound"),
    Claim("coupling_exact_factor", "Shared additive noise cancels exactly",
          "mean D_{t+1} / mean D_t = (1 - beta mu)^2 for isotropic linear gradients", "equality"),
    Claim("tv_geometric_decay", "Total variation decays geometrically",
          "fitted log-TV slope <= log sqrt((1 - beta mu)^2 + beta^2 L_W) + 0.01", "rate"),
    Claim("tv_binned_agreement", "Histogram TV estimator agrees with the exact curve",
          "sup_t |TV_binned(t) - TV_exact(t)| <= 0.03", "equality"),
    Claim("tv_binned_decay", "Empirical TV decays at least geometrically",
          "fitted log-TV slope <= log rho_bound + 0.01 + 3 se", "rate"),
    Claim("drift_condition", "Foster-Lyapunov drift of V = 1 + ||theta - theta*||^2",
          "E[V'|V] <= lambda V + b with lambda = (1 - beta mu)^2 + beta^2 L_sigma, b = beta^2 sigma^2 + 1 - lambda",
          "bound"),
    Claim("last_iterate_subgaussian_norm", "Last-iterate deviation under a sub-Gaussian noise norm",
          "P(||theta_T - theta*|| > Kbar sqrt(8 beta log(e/delta) / mu)) <= delta + remainder", "bound"),
    Claim("last_iterate_subexp_norm", "Last-iterate deviation under a sub-exponential noise norm",
          "P(||theta_T - theta*|| > 4 e Kbar log(2/delta) sqrt(beta/mu)) <= delta + remainder", "bound"),
    Claim("last_iterate_dimension_free_subgaussian", "Dimension-free last-iterate deviation",
          "P(||theta_T - theta*|| > sqrt(beta sigma^2/mu) + 2 K sqrt(beta log(1/delta)/mu)) <= delta + remainder",
          "bound"),
    Claim("last_iterate_dimension_free_subexp", "Dimension-free last-iterate deviation, sub-exponential",
          "P(||theta_T - theta*|| > sqrt(beta sigma^2/mu) + 2 K max(sqrt(beta log(1/delta)/mu), beta log(1/delta)))"
          " <= delta + remainder", "bound"),
    Claim("covariance_decay_bound", "Geometric decorrelation of linear-gradient iterates",
          "E<theta_i - theta*, theta_j - theta*> <= 2 (1 - beta mu)^|i-j| (alpha_W^i W2^2(nu, pi) + Var_pi)", "bound"),
    Claim("covariance_decay_exact", "Exact autocovariance of the linear-Gaussian chain",
          "E<theta_i - theta*, theta_{i+k} - theta*> = tr(A^k V)", "equality"),
    Claim("trajectory_lipschitz_concentration", "Concentration of Lipschitz functions of a stationary trajectory",
          "f - E f in Psi2(K C_W sqrt(beta/mu + (n-1) beta^2)), C_W = 1/(1 - alpha_W)", "bound"),
    Claim("tail_average_rms_oracle", "Tail-average RMS error matches the exact Gaussian law",
          "|RMS_hat / RMS_exact - 1| <= 0.05", "equality"),
    Claim("tail_average_rate", "Tail-average error decays as n^(-1/2)",
          "slope of log RMS on log n in [-0.55, -0.45]", "rate"),
    Claim("tail_average_deviation", "High-probability tail-average deviation bound",
          "P(||avg - theta*|| > r(delta, n, n0)) <= Upsilon delta, Upsilon = 1 + M rho^n0 ||dnu/dpi||_inf", "bound"),
    Claim("matrix_average_concentration", "Operator norm of averaged random matrices",
          "P(||Xi_bar||_2 > 3 K_Xi phi((log(2/delta) + 3d)/N)) <= delta", "bound"),
    Claim("vector_average_concentration", "Norm of averaged random vectors",
          "P(||xi_bar|| > 4 K_xi phi((log(2/delta) + 2d)/N)) <= delta", "bound"),
    Claim("minibatch_boundedness", "Minibatch iterates stay in a ball over a finite horizon",
          "P(max_{s<=T} ||theta_s - theta*|| > C) <= delta", "bound"),
    Claim("gradient_step_contraction", "Deterministic gradient step is a contraction",
          "||g(theta) - g(theta')|| <= (1 - beta mu) ||theta - theta'|| for beta <= 2/(mu + L)", "property"),
    Claim("geometric_sum_bound", "Sum of a geometrically decaying matrix",
          "sum_ij C alpha^|i-j| <= C (n + 2 alpha/(1-alpha) (n - (1 - alpha^n)/(1 - alpha)))", "property"),
    Claim("trinomial_identity", "Trinomial coefficient identity",
          "sum_k p!/(k! (k+p-l)! (l-2k)!) 2^(l-2k) = C(2p, l)", "property"),
    Claim("burn_in", "Stationarity attestation",
          "snapshot mean and variance at T/2 and T differ by < 2 standard errors", "property"),
]

CLAIMS: dict[str, Claim] = {c.claim_id: c for c in _CLAIMS}


def base_id(claim_id: str) -> str:
    """Strip an ``@qualifier`` suffix (e.g. a delta value or a functional label)."""
    return claim_id.split("@", 1)[0]


def resolve(claim_id: str) -> Claim:
    try:
        return CLAIMS[base_id(claim_id)]
    except KeyError:
        raise KeyError(f"unknown claim id {claim_id!r}") from None
