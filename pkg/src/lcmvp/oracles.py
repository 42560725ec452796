"""Slow, independent reference computations used to check the fast kernels.

Nothing here is on the sampling path.  Orthant probabilities are obtained by
deterministic quadrature (Owen's T function for two dimensions, adaptive 1-D
quadrature over a conditioning variable above that), so they share no code
with the GHK recursion.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize
from scipy.special import ndtr, ndtri, owens_t

__all__ = [
    "bvn_cdf",
    "mvn_cdf_exact",
    "orthant_prob_exact",
    "lcmvp_exact_pattern_probs",
    "lcmvp_exact_loglik",
    "ci_pattern_probs",
    "all_patterns",
    "tetrachoric",
]


def bvn_cdf(h: float, k: float, rho: float) -> float:
    """P(X < h, Y < k) for a standard bivariate normal with correlation rho."""
    if rho >= 1.0:
        return float(ndtr(min(h, k)))
    if rho <= -1.0:
        return float(max(0.0, ndtr(h) - ndtr(-k)))
    if h == 0.0:
        h = 1e-12
    if k == 0.0:
        k = 1e-12
    r = math.sqrt(1.0 - rho * rho)
    a_h = (k - rho * h) / (h * r)
    a_k = (h - rho * k) / (k * r)
    beta = 0.0 if h * k > 0 or (h * k == 0 and h + k >= 0) else 0.5
    val = 0.5 * ndtr(h) + 0.5 * ndtr(k) - owens_t(h, a_h) - owens_t(k, a_k) - beta
    return float(min(1.0, max(0.0, val)))


def mvn_cdf_exact(h, R, epsabs: float = 1e-13) -> float:
    """P(X < h) for X ~ N(0, R), R a correlation matrix of dimension <= 4."""
    h = np.asarray(h, dtype=float)
    R = np.asarray(R, dtype=float)
    T = h.size
    if T == 1:
        return float(ndtr(h[0]))
    if T == 2:
        return bvn_cdf(h[0], h[1], R[0, 1])
    if T > 4:
        raise ValueError("exact orthant oracle supports at most 4 dimensions")
    # condition on the first coordinate
    r = R[1:, 0]
    S = R[1:, 1:] - np.outer(r, r)
    sd = np.sqrt(np.diag(S))
    Rc = S / np.outer(sd, sd)
    np.fill_diagonal(Rc, 1.0)

    def integrand(x):
        return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi) * mvn_cdf_exact((h[1:] - r * x) / sd, Rc, epsabs)

    val, _ = integrate.quad(integrand, -np.inf, h[0], epsabs=epsabs, epsrel=1e-11, limit=200)
    return float(val)


def orthant_prob_exact(beta, omega, y) -> float:
    """P(sign pattern y) for z ~ N(beta, Omega), with y_t = 1 iff z_t > 0."""
    beta = np.asarray(beta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    s = 2.0 * np.asarray(y, dtype=float) - 1.0
    # s*z > 0  <=>  -s*(z - beta) < s*beta
    return mvn_cdf_exact(s * beta, omega * np.outer(s, s))


def all_patterns(T: int) -> np.ndarray:
    return np.array([[(k >> (T - 1 - t)) & 1 for t in range(T)] for k in range(2**T)], dtype=np.int8)


def lcmvp_exact_pattern_probs(beta, omegas, prev: float, patterns) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    out = []
    for y in np.atleast_2d(patterns):
        p1 = orthant_prob_exact(beta[0], omegas[0], y)
        p2 = orthant_prob_exact(beta[1], omegas[1], y)
        out.append((1.0 - prev) * p1 + prev * p2)
    return np.array(out)


def lcmvp_exact_loglik(beta, omegas, prev: float, y) -> float:
    pats, counts = np.unique(np.atleast_2d(y), axis=0, return_counts=True)
    probs = lcmvp_exact_pattern_probs(beta, omegas, prev, pats)
    return float(np.sum(counts * np.log(probs)))


def ci_pattern_probs(se, sp, prev: float, patterns) -> np.ndarray:
    """Pattern probabilities under conditional independence, by enumeration."""
    se = np.asarray(se, dtype=float)
    fp = 1.0 - np.asarray(sp, dtype=float)
    y = np.atleast_2d(patterns).astype(float)
    p2 = np.prod(np.where(y == 1, se, 1 - se), axis=1)
    p1 = np.prod(np.where(y == 1, fp, 1 - fp), axis=1)
    return prev * p2 + (1 - prev) * p1


def tetrachoric(y1, y2) -> float:
    """Maximum-likelihood tetrachoric correlation of two binary vectors.

    Thresholds are fixed at the marginal probit values and the correlation
    solves ``P(both positive) = observed`` exactly.
    """
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    p1 = y1.mean()
    p2 = y2.mean()
    p11 = np.mean(y1 * y2)
    if p1 in (0.0, 1.0) or p2 in (0.0, 1.0):
        raise ValueError("tetrachoric correlation needs both outcomes in each margin")
    h = ndtri(p1)
    k = ndtri(p2)

    def f(rho):
        return bvn_cdf(h, k, rho) - p11

    lo, hi = -1 + 1e-12, 1 - 1e-12
    flo, fhi = f(lo), f(hi)
    if flo >= 0:
        return -1.0
    if fhi <= 0:
        return 1.0
    return float(optimize.brentq(f, lo, hi, xtol=1e-12))


def tetrachoric_se(mu_i: float, mu_j: float, rho: float, n: float) -> float:
    """Asymptotic standard error of the tetrachoric estimate.

    Latent pair is standard bivariate normal with correlation ``rho`` and
    positive-response probabilities ``Phi(mu_i)``, ``Phi(mu_j)``; ``n`` is
    the number of subjects.  Uses ``1 / (n phi2^2 sum_ij 1/p_ij)``.
    """
    h, k = -mu_i, -mu_j
    p00 = bvn_cdf(h, k, rho)
    ph, pk = float(ndtr(h)), float(ndtr(k))
    cells = np.array([p00, ph - p00, pk - p00, 1.0 - ph - pk + p00])
    if np.any(cells <= 0):
        return float("inf")
    r2 = 1.0 - rho * rho
    phi2 = math.exp(-(h * h - 2.0 * rho * h * k + k * k) / (2.0 * r2)) / (2.0 * math.pi * math.sqrt(r2))
    return 1.0 / math.sqrt(n * phi2 * phi2 * float(np.sum(1.0 / cells)))
