"""Log-likelihoods and analytic gradients for the three latent class models.

* conditional independence (CI): closed form over the two classes;
* latent class multivariate probit (LC-MVP): each class-conditional response
  probability is a multivariate normal orthant probability, computed by the
  GHK recursion driven by per-subject uniforms ``u`` that are themselves
  model parameters (shared by both classes);
* latent trait (LT): a restricted LC-MVP whose class correlation matrices
  are generated by the loadings ``b``.  It is fitted through the same GHK
  kernel after mapping ``(a, b)`` to ``(beta, Omega)``.  A conditional form
  in the random effect ``gamma`` and a Gauss-Hermite marginal form are also
  provided.

All probability arithmetic is carried on the log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import log_ndtr as _sp_log_ndtr
from scipy.special import logsumexp, ndtr as _sp_ndtr

from .corrconstrain import CorrBounds, CorrChol, chol_from_raw, chol_from_raw_vjp, n_raw, raw_from_corr
from .normal import LOG_PROB_FLOOR, log_ndtr, log_npdf, ndtr, ndtri

__all__ = [
    "BinaryDataset",
    "MvpParams",
    "LatentTraitParams",
    "CiParams",
    "SummaryAccuracy",
    "MvpLayout",
    "MvpGradient",
    "summary_accuracy_lt",
    "summary_accuracy_mvp",
    "theta_from_ab",
    "theta_jacobian_log",
    "lt_corr",
    "lt_as_mvp",
    "ci_loglik",
    "ci_loglik_grad",
    "ghk_class_prob",
    "ghk_class_probs",
    "lcmvp_loglik",
    "lcmvp_loglik_grad_natural",
    "lcmvp_grad",
    "lt_loglik_grad",
    "lt_conditional_loglik",
    "lt_marginal_loglik_gh",
    "corr_chol_vjp",
]

# GHK uniforms are clamped here to keep the inverse CDF finite.
U_MIN = 1e-12
U_MAX = 1.0 - 1e-12
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# --------------------------------------------------------------------------
# data and parameter containers


@dataclass(frozen=True)
class BinaryDataset:
    """N x T matrix of 0/1 test results."""

    y: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 2:
            raise ValueError("y must be a 2-D array")
        if y.shape[0] < 1 or y.shape[1] < 2:
            raise ValueError("need N >= 1 subjects and T >= 2 tests")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("y must contain only 0 and 1")
        y = np.ascontiguousarray(y, dtype=np.int8)
        y.flags.writeable = False
        object.__setattr__(self, "y", y)

    @property
    def n_subjects(self) -> int:
        return self.y.shape[0]

    @property
    def n_tests(self) -> int:
        return self.y.shape[1]

    def pattern_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique response rows and their multiplicities (cached)."""
        cached = self.__dict__.get("_patterns")
        if cached is None:
            cached = np.unique(self.y, axis=0, return_counts=True)
            object.__setattr__(self, "_patterns", cached)
        return cached

    def __eq__(self, other):
        return isinstance(other, BinaryDataset) and np.array_equal(self.y, other.y)

    def __hash__(self):
        return hash(self.y.tobytes())


@dataclass(frozen=True)
class SummaryAccuracy:
    se: np.ndarray
    sp: np.ndarray

    @property
    def fp(self) -> np.ndarray:
        return 1.0 - self.sp


@dataclass(frozen=True)
class CiParams:
    beta: np.ndarray
    prev: float


@dataclass(frozen=True)
class MvpParams:
    """LC-MVP parameters.  Row 0 of ``beta`` is the non-diseased class."""

    beta: np.ndarray
    prev: float
    chol: tuple[CorrChol, CorrChol]
    u: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.prev <= 1.0:
            raise ValueError("prevalence must lie in (0, 1]")
        u = np.asarray(self.u, dtype=float)
        if np.any(u <= 0.0) or np.any(u >= 1.0):
            raise ValueError("GHK uniforms must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class LatentTraitParams:
    a: np.ndarray
    b: np.ndarray
    prev: float
    gamma: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.b) < 0.0):
            raise ValueError("loadings b must be non-negative")
        if not 0.0 < self.prev < 1.0:
            raise ValueError("prevalence must lie in (0, 1)")


# --------------------------------------------------------------------------
# summary accuracy and the latent-trait <-> MVP mapping


def summary_accuracy_mvp(beta) -> SummaryAccuracy:
    beta = np.asarray(beta, dtype=float)
    return SummaryAccuracy(se=_sp_ndtr(beta[1]), sp=_sp_ndtr(-beta[0]))


def theta_from_ab(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a / np.sqrt(1.0 + b * b)


def summary_accuracy_lt(a, b) -> SummaryAccuracy:
    return summary_accuracy_mvp(theta_from_ab(a, b))


def theta_jacobian_log(b):
    """log of d(theta)/d(a) = -0.5 * log(1 + b^2)."""
    b = np.asarray(b, dtype=float)
    out = -0.5 * np.log1p(b * b)
    return float(out) if out.ndim == 0 else out


def lt_corr(b_d) -> np.ndarray:
    """Correlation matrix of ``I + b b^T``."""
    b_d = np.asarray(b_d, dtype=float)
    c = b_d / np.sqrt(1.0 + b_d * b_d)
    omega = np.outer(c, c)
    np.fill_diagonal(omega, 1.0)
    return omega


def lt_as_mvp(a, b) -> tuple[np.ndarray, tuple[CorrChol, CorrChol]]:
    """Express latent trait parameters as LC-MVP intercepts and correlations."""
    b = np.asarray(b, dtype=float)
    beta = theta_from_ab(a, b)
    chols = tuple(CorrChol.from_corr(lt_corr(b[d])) for d in range(2))
    return beta, chols


# --------------------------------------------------------------------------
# conditional independence


def _log_bern_probit(y, eta):
    """log P(Y = y) for Y ~ Bernoulli(Phi(eta)), elementwise."""
    s = 2.0 * y - 1.0
    return _sp_log_ndtr(s * eta)


def _mix_logs(log1, log2, prev):
    with np.errstate(divide="ignore"):
        return np.logaddexp(np.log1p(-prev) + log1, np.log(prev) + log2)


def ci_loglik(beta, prev: float, data: BinaryDataset) -> float:
    beta = np.asarray(beta, dtype=float)
    y = data.y.astype(float)
    l1 = _log_bern_probit(y, beta[0]).sum(axis=1)
    l2 = _log_bern_probit(y, beta[1]).sum(axis=1)
    return float(np.sum(_mix_logs(l1, l2, prev)))


def ci_loglik_grad(beta, prev: float, data: BinaryDataset) -> tuple[float, np.ndarray, float]:
    """CI log-likelihood with gradients in ``beta`` and in ``logit(prev)``."""
    beta = np.asarray(beta, dtype=float)
    pats, counts = data.pattern_counts()
    y = pats.astype(float)
    s = 2.0 * y - 1.0
    l1t = _sp_log_ndtr(s * beta[0])
    l2t = _sp_log_ndtr(s * beta[1])
    l1 = l1t.sum(axis=1)
    l2 = l2t.sum(axis=1)
    ln = _mix_logs(l1, l2, prev)
    with np.errstate(divide="ignore"):
        r1 = np.exp(np.log1p(-prev) + l1 - ln)
    r2 = np.exp(np.log(prev) + l2 - ln)
    # d/d eta of log Phi(s*eta) is the signed inverse Mills ratio
    m1 = s * np.exp(-0.5 * (s * beta[0]) ** 2 - 0.5 * math.log(2 * math.pi) - l1t)
    m2 = s * np.exp(-0.5 * (s * beta[1]) ** 2 - 0.5 * math.log(2 * math.pi) - l2t)
    g = np.empty((2, data.n_tests))
    g[0] = (counts * r1) @ m1
    g[1] = (counts * r2) @ m2
    g_logit = float(np.sum(counts * (r2 - prev)))
    return float(np.sum(counts * ln)), g, g_logit


# --------------------------------------------------------------------------
# GHK kernels


@njit(cache=True, nogil=True)
def _ghk_class_forward(beta, L, y, u, eps, a_t, dlq, dea, deu):
    """One class, one subject.  Fills the per-step tape and returns log prob."""
    T = beta.shape[0]
    logp = 0.0
    for t in range(T):
        m = beta[t]
        for k in range(t):
            m += L[t, k] * eps[k]
        a = m / L[t, t]
        s = 1.0 if y[t] == 1 else -1.0
        ut = u[t]
        inside = True
        if ut < U_MIN:
            ut = U_MIN
            inside = False
        elif ut > U_MAX:
            ut = U_MAX
            inside = False
        w = 1.0 - ut if s > 0.0 else ut
        sa = s * a
        a_t[t] = a
        floored = False
        if sa > -30.0:
            # one erfc gives q and 1 - q, each without cancellation
            if sa >= 0.0:
                qc = ndtr(-sa)
                q = 1.0 - qc
                lq = math.log1p(-qc)
            else:
                q = ndtr(sa)
                qc = 1.0 - q
                lq = math.log(q)
            wq = w * q
            if wq <= 0.5:
                x = ndtri(wq)
            else:
                x = -ndtri((1.0 - w) + w * qc)
            eps[t] = -s * x
            if x > -35.0:
                pa = math.exp(-0.5 * a * a) * _INV_SQRT_2PI
                px = math.exp(-0.5 * x * x) * _INV_SQRT_2PI
                dlq[t] = s * pa / q
                dea[t] = -w * pa / px
                deu[t] = q / px if inside else 0.0
                logp += lq
                continue
        else:
            lq = log_ndtr(sa)
            floored = lq < LOG_PROB_FLOOR
            if floored:
                lq = LOG_PROB_FLOOR
            q = math.exp(lq)
            x = ndtri(w * q)
            eps[t] = -s * x
        # far tail: ratios on the log scale
        lpx = log_npdf(x)
        if floored:
            dlq[t] = 0.0
            dea[t] = 0.0
        else:
            dlq[t] = s * math.exp(log_npdf(a) - lq)
            dea[t] = -w * math.exp(log_npdf(a) - lpx)
        deu[t] = math.exp(lq - lpx) if inside else 0.0
        logp += lq
    return logp


@njit(cache=True, nogil=True)
def _ghk_class_backward(L, lam, eps, a_t, dlq, dea, deu, eps_bar, g_beta, g_L, g_u):
    """Reverse pass for one class with cotangent ``lam`` on the log prob."""
    T = L.shape[0]
    for t in range(T):
        eps_bar[t] = 0.0
    for t in range(T - 1, -1, -1):
        eb = eps_bar[t]
        g_u[t] += eb * deu[t]
        abar = lam * dlq[t] + eb * dea[t]
        ltt = L[t, t]
        mbar = abar / ltt
        g_L[t, t] -= abar * a_t[t] / ltt
        g_beta[t] += mbar
        for k in range(t):
            g_L[t, k] += mbar * eps[k]
            eps_bar[k] += mbar * L[t, k]


@njit(cache=True, nogil=True)
def _mvp_kernel(y, beta, L, log1mp, logp, u, want_grad):
    """Mixture log-likelihood over subjects, optionally with gradients.

    Gradients are with respect to ``beta``, the two Cholesky factors (full
    T x T cotangents), ``u`` itself, and ``logit(p)``.
    """
    N, T = y.shape
    eps = np.empty(T)
    a_t = np.empty((2, T))
    dlq = np.empty((2, T))
    dea = np.empty((2, T))
    deu = np.empty((2, T))
    epss = np.empty((2, T))
    eps_bar = np.empty(T)
    g_beta = np.zeros((2, T))
    g_L = np.zeros((2, T, T))
    g_u = np.zeros((N, T))
    g_logit = 0.0
    p = math.exp(logp)
    total = 0.0
    for n in range(N):
        yn = y[n]
        un = u[n]
        lp0 = _ghk_class_forward(beta[0], L[0], yn, un, eps, a_t[0], dlq[0], dea[0], deu[0])
        for t in range(T):
            epss[0, t] = eps[t]
        lp1 = _ghk_class_forward(beta[1], L[1], yn, un, eps, a_t[1], dlq[1], dea[1], deu[1])
        for t in range(T):
            epss[1, t] = eps[t]
        x0 = log1mp + lp0
        x1 = logp + lp1
        mx = max(x0, x1)
        ln = mx + math.log(math.exp(x0 - mx) + math.exp(x1 - mx))
        total += ln
        if want_grad:
            r0 = math.exp(x0 - ln)
            r1 = math.exp(x1 - ln)
            g_logit += r1 - p
            if r0 > 0.0:
                _ghk_class_backward(L[0], r0, epss[0], a_t[0], dlq[0], dea[0], deu[0],
                                    eps_bar, g_beta[0], g_L[0], g_u[n])
            if r1 > 0.0:
                _ghk_class_backward(L[1], r1, epss[1], a_t[1], dlq[1], dea[1], deu[1],
                                    eps_bar, g_beta[1], g_L[1], g_u[n])
    return total, g_beta, g_L, g_u, g_logit


@njit(cache=True, nogil=True)
def _ghk_probs_kernel(y, beta_d, L_d, u):
    N, T = y.shape
    eps = np.empty(T)
    a_t = np.empty(T)
    d1 = np.empty(T)
    d2 = np.empty(T)
    d3 = np.empty(T)
    out = np.empty(N)
    z = np.empty((N, T))
    for n in range(N):
        out[n] = _ghk_class_forward(beta_d, L_d, y[n], u[n], eps, a_t, d1, d2, d3)
        for t in range(T):
            acc = beta_d[t]
            for k in range(t + 1):
                acc += L_d[t, k] * eps[k]
            z[n, t] = acc
    return out, z


@njit(cache=True, nogil=True)
def corr_chol_vjp(L, L_bar):
    """Pull a cotangent on a correlation Cholesky factor back to Omega.

    Returns the cotangent on the strict lower triangle of Omega (the
    diagonal is fixed at one, so only off-diagonal entries are free).
    """
    T = L.shape[0]
    Lb = L_bar.copy()
    ob = np.zeros((T, T))
    for i in range(T - 1, 0, -1):
        d = Lb[i, i]
        if d != 0.0:
            for k in range(i):
                Lb[i, k] -= d * L[i, k] / L[i, i]
        for j in range(i - 1, -1, -1):
            g = Lb[i, j] / L[j, j]
            ob[i, j] = g
            for k in range(j):
                Lb[i, k] -= g * L[j, k]
                Lb[j, k] -= g * L[i, k]
            Lb[j, j] -= g * L[i, j]
    return ob


# --------------------------------------------------------------------------
# python-facing LC-MVP API


def _log_prev(prev: float) -> tuple[float, float]:
    log1mp = math.log1p(-prev) if prev < 1.0 else -math.inf
    logp = math.log(prev) if prev > 0.0 else -math.inf
    return log1mp, logp


def _stack_L(chol) -> np.ndarray:
    return np.ascontiguousarray(np.stack([chol[0].L, chol[1].L]), dtype=float)


def ghk_class_prob(beta_d, chol_d: CorrChol, y_n, u_n) -> tuple[float, np.ndarray]:
    """GHK probability of one response vector in one class.

    Returns the probability and the latent normal vector ``z`` implied by
    ``u_n`` (``z_t > 0`` exactly when ``y_n[t] == 1``).
    """
    lp, z = ghk_class_probs(beta_d, chol_d, np.atleast_2d(y_n), np.atleast_2d(u_n))
    return float(np.exp(lp[0])), z[0]


def ghk_class_probs(beta_d, chol_d: CorrChol, y, u) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised GHK over subjects; returns (log probs, latent z)."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("GHK uniforms must lie strictly inside (0, 1)")
    return _ghk_probs_kernel(
        np.ascontiguousarray(y, dtype=np.int8),
        np.ascontiguousarray(beta_d, dtype=float),
        np.ascontiguousarray(chol_d.L, dtype=float),
        np.ascontiguousarray(u),
    )


def lcmvp_loglik(params: MvpParams, data: BinaryDataset) -> float:
    log1mp, logp = _log_prev(params.prev)
    ll, *_ = _mvp_kernel(
        data.y, np.ascontiguousarray(params.beta, dtype=float), _stack_L(params.chol),
        log1mp, logp, np.ascontiguousarray(params.u, dtype=float), False,
    )
    return float(ll)


def lcmvp_loglik_grad_natural(params: MvpParams, data: BinaryDataset):
    """Log-likelihood and its gradient in (beta, L, u, logit p).

    Returns ``(ll, g_beta, g_L, g_u, g_logit)`` with ``g_L`` of shape
    (2, T, T) holding cotangents on the Cholesky factors.
    """
    log1mp, logp = _log_prev(params.prev)
    return _mvp_kernel(
        data.y, np.ascontiguousarray(params.beta, dtype=float), _stack_L(params.chol),
        log1mp, logp, np.ascontiguousarray(params.u, dtype=float), True,
    )


@dataclass(frozen=True)
class MvpLayout:
    """Packing of LC-MVP parameters into one unconstrained vector.

    Order: beta (2T, non-diseased row first), logit p, raw correlations of
    class 1 then class 2 (row-major lower triangle), logit u (N*T, row-major).
    """

    n_tests: int
    n_subjects: int
    bounds: tuple[CorrBounds, CorrBounds]

    @property
    def n_corr(self) -> int:
        return n_raw(self.n_tests)

    @property
    def size(self) -> int:
        return 2 * self.n_tests + 1 + 2 * self.n_corr + self.n_subjects * self.n_tests

    @property
    def slices(self) -> dict:
        T, m = self.n_tests, self.n_corr
        o = 2 * T
        return {
            "beta": slice(0, o),
            "logit_prev": slice(o, o + 1),
            "raw1": slice(o + 1, o + 1 + m),
            "raw2": slice(o + 1 + m, o + 1 + 2 * m),
            "u": slice(o + 1 + 2 * m, self.size),
        }

    def unpack(self, x) -> MvpParams:
        s = self.slices
        T, N = self.n_tests, self.n_subjects
        c1 = chol_from_raw(x[s["raw1"]], self.bounds[0])
        c2 = chol_from_raw(x[s["raw2"]], self.bounds[1])
        v = x[s["u"]].reshape(N, T)
        return MvpParams(
            beta=x[s["beta"]].reshape(2, T).copy(),
            prev=float(_expit(x[s["logit_prev"]][0])),
            chol=(c1, c2),
            u=np.clip(_expit(v), U_MIN, U_MAX),
        )

    def pack(self, params: MvpParams) -> np.ndarray:
        s = self.slices
        x = np.empty(self.size)
        x[s["beta"]] = np.asarray(params.beta, dtype=float).ravel()
        x[s["logit_prev"]] = _logit(params.prev)
        x[s["raw1"]] = raw_from_corr(params.chol[0].omega, self.bounds[0])
        x[s["raw2"]] = raw_from_corr(params.chol[1].omega, self.bounds[1])
        x[s["u"]] = _logit(np.asarray(params.u, dtype=float)).ravel()
        return x


@dataclass(frozen=True)
class MvpGradient:
    value: float
    beta: np.ndarray
    logit_prev: float
    raw_corr: tuple[np.ndarray, np.ndarray]
    u_unc: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([
            self.beta.ravel(), [self.logit_prev], self.raw_corr[0], self.raw_corr[1], self.u_unc.ravel()
        ])


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def lcmvp_value_and_grad(x: np.ndarray, layout: MvpLayout, data: BinaryDataset) -> tuple[float, np.ndarray]:
    """Log-likelihood plus all change-of-variable log-Jacobians, and gradient.

    The Jacobians are those of ``p = expit(.)``, of each raw->Omega map and of
    ``u = expit(.)``; adding a prior density on (beta, p, Omega) and a flat
    prior on ``u`` gives the unconstrained log posterior.

    Raises:
        InfeasibleBoundsError: if ``x`` encodes a correlation outside the
            feasible region.
    """
    s = layout.slices
    T, N = layout.n_tests, layout.n_subjects
    beta = np.ascontiguousarray(x[s["beta"]].reshape(2, T))
    lp = float(x[s["logit_prev"]][0])
    log1mp = -np.logaddexp(0.0, lp)
    logp = -np.logaddexp(0.0, -lp)
    raw1 = x[s["raw1"]]
    raw2 = x[s["raw2"]]
    c1 = chol_from_raw(raw1, layout.bounds[0])
    c2 = chol_from_raw(raw2, layout.bounds[1])
    v = x[s["u"]].reshape(N, T)
    u = _expit(v)
    ll, g_beta, g_L, g_u, g_logit = _mvp_kernel(
        data.y, beta, np.stack([c1.L, c2.L]), log1mp, logp, np.ascontiguousarray(u), True
    )
    # log-Jacobians: p, correlations, u
    p = math.exp(logp)
    jac_u = np.sum(-np.logaddexp(0.0, -v) - np.logaddexp(0.0, v))
    value = ll + log1mp + logp + c1.log_jacobian + c2.log_jacobian + jac_u
    _, gr1 = chol_from_raw_vjp(raw1, layout.bounds[0], g_L[0], 1.0)
    _, gr2 = chol_from_raw_vjp(raw2, layout.bounds[1], g_L[1], 1.0)
    grad = np.empty(layout.size)
    grad[s["beta"]] = g_beta.ravel()
    grad[s["logit_prev"]] = g_logit + 1.0 - 2.0 * p
    grad[s["raw1"]] = gr1
    grad[s["raw2"]] = gr2
    grad[s["u"]] = (g_u * u * (1.0 - u) + (1.0 - 2.0 * u)).ravel()
    return float(value), grad


def lcmvp_grad(params: MvpParams, data: BinaryDataset, bounds: tuple[CorrBounds, CorrBounds] | None = None) -> MvpGradient:
    """Gradient in the unconstrained parameterization, Jacobians included.

    ``bounds`` defaults to unconstrained correlations for both classes.
    """
    T = data.n_tests
    if bounds is None:
        bounds = (CorrBounds.unconstrained(T), CorrBounds.unconstrained(T))
    layout = MvpLayout(T, data.n_subjects, tuple(bounds))
    value, g = lcmvp_value_and_grad(layout.pack(params), layout, data)
    s = layout.slices
    return MvpGradient(
        value=value,
        beta=g[s["beta"]].reshape(2, T),
        logit_prev=float(g[s["logit_prev"]][0]),
        raw_corr=(g[s["raw1"]], g[s["raw2"]]),
        u_unc=g[s["u"]].reshape(data.n_subjects, T),
    )


# --------------------------------------------------------------------------
# latent trait


def lt_loglik_grad(a, b, prev: float, u, data: BinaryDataset):
    """GHK log-likelihood of the latent trait model and its gradient.

    Returns ``(ll, g_a, g_b, g_u, g_logit)``; gradients are in the natural
    ``a``, ``b`` and ``u`` and in ``logit(prev)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    T = data.n_tests
    s2 = 1.0 + b * b
    rs = 1.0 / np.sqrt(s2)
    theta = a * rs
    c = b * rs
    Ls = np.empty((2, T, T))
    for d in range(2):
        om = np.outer(c[d], c[d])
        np.fill_diagonal(om, 1.0)
        Ls[d] = np.linalg.cholesky(om)
    log1mp, logp = _log_prev(prev)
    ll, g_beta, g_L, g_u, g_logit = _mvp_kernel(
        data.y, np.ascontiguousarray(theta), Ls, log1mp, logp, np.ascontiguousarray(u, dtype=float), True
    )
    g_c = np.zeros((2, T))
    for d in range(2):
        ob = corr_chol_vjp(Ls[d], g_L[d])
        full = ob + ob.T
        g_c[d] = full @ c[d]
    dtheta_db = -a * b * rs / s2
    dc_db = rs / s2
    g_a = g_beta * rs
    g_b = g_beta * dtheta_db + g_c * dc_db
    return float(ll), g_a, g_b, g_u, g_logit


def lt_conditional_loglik(params: LatentTraitParams, data: BinaryDataset) -> float:
    """Log-likelihood given the random effects, plus their N(0,1) log density."""
    if params.gamma is None:
        raise ValueError("conditional log-likelihood needs gamma")
    a = np.asarray(params.a, dtype=float)
    b = np.asarray(params.b, dtype=float)
    g = np.asarray(params.gamma, dtype=float)[:, None]
    y = data.y.astype(float)
    l1 = _log_bern_probit(y, a[0] + b[0] * g).sum(axis=1)
    l2 = _log_bern_probit(y, a[1] + b[1] * g).sum(axis=1)
    mix = _mix_logs(l1, l2, params.prev)
    return float(np.sum(mix) + np.sum(-0.5 * g**2 - 0.5 * math.log(2 * math.pi)))


def lt_marginal_loglik_gh(a, b, prev: float, data: BinaryDataset, nodes: int = 64) -> float:
    """Marginal log-likelihood with each gamma integrated out by Gauss-Hermite."""
    if nodes < 16:
        raise ValueError("use at least 16 quadrature nodes")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x, w = np.polynomial.hermite.hermgauss(nodes)
    gam = math.sqrt(2.0) * x
    logw = np.log(w) - 0.5 * math.log(math.pi)
    pats, counts = data.pattern_counts()
    y = pats.astype(float)[:, None, :]
    l1 = _log_bern_probit(y, a[0][None, None, :] + b[0][None, None, :] * gam[None, :, None]).sum(axis=2)
    l2 = _log_bern_probit(y, a[1][None, None, :] + b[1][None, None, :] * gam[None, :, None]).sum(axis=2)
    mix = _mix_logs(l1, l2, prev)
    per_pattern = logsumexp(mix + logw[None, :], axis=1)
    return float(np.sum(counts * per_pattern))
