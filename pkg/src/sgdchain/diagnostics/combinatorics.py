"""Exact identities used in the moment and covariance arguments."""

from __future__ import annotations

from math import comb, factorial

import numpy as np


def geometric_sum_bound(C: float, alpha: float, n: int) -> float:
    """Closed-form upper bound on sum_{i,j<=n} C alpha^|i-j|."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 1:
        raise ValueError("n must be at least 1")
    return C * (n + (2 * alpha / (1 - alpha)) * (n - (1 - alpha**n) / (1 - alpha)))


def geometric_double_sum(C: float, alpha: float, n: int) -> float:
    """Brute-force sum_{i,j} C alpha^|i-j| (the comparison oracle)."""
    idx = np.arange(n)
    return float(C * np.sum(alpha ** np.abs(idx[:, None] - idx[None, :])))


def trinomial(p: int, a: int, b: int, c: int) -> int:
    """p! / (a! b! c!) when a + b + c = p, zero if any index is negative."""
    if min(a, b, c) < 0:
        return 0
    if a + b + c != p:
        raise ValueError("trinomial indices must sum to p")
    return factorial(p) // (factorial(a) * factorial(b) * factorial(c))


def trinomial_identity(p: int, l: int) -> tuple[int, int]:
    """(sum_k trinomial(p; k, k+p-l, l-2k) 2^(l-2k), binomial(2p, l)) in exact integers."""
    if not (isinstance(p, (int, np.integer)) and isinstance(l, (int, np.integer))):
        raise TypeError("p and l must be integers")
    if not (2 <= l <= 2 * p <= 40):
        raise ValueError(f"need 2 <= l <= 2p <= 40, got p={p}, l={l}")
    lhs = sum(trinomial(p, k, k + p - l, l - 2 * k) * 2 ** (l - 2 * k) for k in range(0, l // 2 + 1))
    return lhs, comb(2 * p, l)
