"""Log posterior densities on the unconstrained space, one class per model.

Each target exposes ``logp_grad(x)`` returning the log density (likelihood,
prior and every change-of-variable Jacobian) and its gradient, an initial
point, parameter names, and ``derived(draws)`` which maps draws to summary
accuracy, prevalence and correlations with class labels identified.

Passing ``data=None`` gives the prior alone (the GHK uniforms then drop out).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr
from scipy.stats import gamma as _gamma_dist

from .corrconstrain import InfeasibleBoundsError, chol_from_raw, chol_from_raw_vjp, n_raw
from .likelihood import BinaryDataset, _mvp_kernel, ci_loglik_grad, corr_chol_vjp, lt_corr
from .priors import PriorSet

__all__ = ["Target", "CiTarget", "MvpTarget", "LatentTraitTarget", "CorrTarget", "make_target", "relabel"]

_INIT_PREV = 0.2
_INIT_RAW_CORR = 0.001


def _logit(p):
    return math.log(p) - math.log1p(-p)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _prev_terms(lp: float, ab) -> tuple[float, float, float]:
    """Beta log prior plus logit Jacobian, its gradient, and p."""
    a, b = ab
    log_p = -float(_softplus(-lp))
    log_1mp = -float(_softplus(lp))
    p = math.exp(log_p)
    val = a * log_p + b * log_1mp + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    return val, a * (1.0 - p) - b * p, p


def _u_terms(v: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Jacobian of u = expit(v), its gradient in v, and u."""
    u = 0.5 * (1.0 + np.tanh(0.5 * v))
    val = -float(np.sum(_softplus(-v) + _softplus(v)))
    return val, 1.0 - 2.0 * u, u


def relabel(se, sp, prev, corr1=None, corr2=None):
    """Swap classes in draws where test 1 has Se below its false positive rate.

    Arrays are indexed by draw on axis 0.  Returns new arrays plus the swap mask.
    """
    se = np.array(se, dtype=float)
    sp = np.array(sp, dtype=float)
    prev = np.array(prev, dtype=float)
    swap = se[:, 0] < 1.0 - sp[:, 0]
    new_se = np.where(swap[:, None], 1.0 - sp, se)
    new_sp = np.where(swap[:, None], 1.0 - se, sp)
    prev = np.where(swap, 1.0 - prev, prev)
    out = [new_se, new_sp, prev]
    if corr1 is not None:
        c1 = np.where(swap[:, None], corr2, corr1)
        c2 = np.where(swap[:, None], corr1, corr2)
        out += [c1, c2]
    return (*out, swap)


class Target:
    """Base class; subclasses fill in the model-specific pieces."""

    model: str = ""
    dim: int = 0
    n_core: int = 0

    def __init__(self, data: BinaryDataset | None, prior: PriorSet):
        if prior.model != self.model:
            raise ValueError(f"prior set {prior.name!r} is for {prior.model}, not {self.model}")
        if data is not None and data.n_tests != prior.n_tests:
            raise ValueError("data and prior disagree on the number of tests")
        self.data = data
        self.prior = prior
        self.T = prior.n_tests
        self.N = 0 if data is None else data.n_subjects

    def logp(self, x) -> float:
        return self.logp_grad(x)[0]

    def logp_grad(self, x) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def initial_point(self) -> np.ndarray:
        raise NotImplementedError

    def param_names(self) -> list[str]:
        raise NotImplementedError

    def derived(self, core_draws: np.ndarray) -> dict:
        raise NotImplementedError

    def swap_classes(self, x: np.ndarray) -> np.ndarray:
        """Relabel the two classes.  An involution with unit Jacobian."""
        T = self.T
        y = x.copy()
        y[:T], y[T: 2 * T] = x[T: 2 * T], x[:T]
        return y

    def _acc_names(self, sym: str) -> list[str]:
        return [f"{sym}[{d + 1},{t + 1}]" for d in range(2) for t in range(self.T)]

    def _u_names(self) -> list[str]:
        return [f"u_raw[{n + 1},{t + 1}]" for n in range(self.N) for t in range(self.T)]


class CiTarget(Target):
    """x = [beta (2T) | logit p]."""

    model = "ci"

    def __init__(self, data, prior):
        super().__init__(data, prior)
        self.dim = 2 * self.T + 1
        self.n_core = self.dim

    def logp_grad(self, x):
        T = self.T
        beta = x[: 2 * T].reshape(2, T)
        val, g_beta = self.prior.accuracy.logpdf_grad(beta)
        pv, pg, p = _prev_terms(float(x[2 * T]), self.prior.prev_prior)
        grad = np.empty(self.dim)
        grad[: 2 * T] = g_beta.ravel()
        grad[2 * T] = pg
        val += pv
        if self.data is not None:
            ll, gl_beta, gl_logit = ci_loglik_grad(beta, p, self.data)
            val += ll
            grad[: 2 * T] += gl_beta.ravel()
            grad[2 * T] += gl_logit
        return float(val), grad

    def initial_point(self):
        return np.append(self.prior.accuracy.mean.ravel(), _logit(_INIT_PREV))

    def swap_classes(self, x):
        y = super().swap_classes(x)
        y[2 * self.T] = -x[2 * self.T]
        return y

    def param_names(self):
        return self._acc_names("beta") + ["logit_prev"]

    def derived(self, core_draws):
        T = self.T
        beta = core_draws[:, : 2 * T].reshape(-1, 2, T)
        se, sp, prev, swap = relabel(ndtr(beta[:, 1]), ndtr(-beta[:, 0]), 1 / (1 + np.exp(-core_draws[:, 2 * T])))
        return {"se": se, "sp": sp, "prev": prev, "swapped": swap}


class MvpTarget(Target):
    """x = [beta (2T) | logit p | raw corr class 1 | raw corr class 2 | logit u (N*T)]."""

    model = "mvp"

    def __init__(self, data, prior):
        super().__init__(data, prior)
        T = self.T
        self.m = n_raw(T)
        self.bounds = tuple(cp.bounds for cp in prior.corr)
        self.etas = tuple(cp.lkj.eta for cp in prior.corr)
        self.n_core = 2 * T + 1 + 2 * self.m
        self.dim = self.n_core + self.N * T
        self._y = None if data is None else data.y

    def _split(self, x):
        T, m = self.T, self.m
        o = 2 * T + 1
        return x[: 2 * T].reshape(2, T), float(x[2 * T]), x[o: o + m], x[o + m: o + 2 * m], x[self.n_core:]

    def logp_grad(self, x):
        T = self.T
        beta, lp, raw1, raw2, v = self._split(x)
        try:
            chols = (chol_from_raw(raw1, self.bounds[0]), chol_from_raw(raw2, self.bounds[1]))
        except InfeasibleBoundsError:
            return -math.inf, np.zeros(self.dim)
        grad = np.empty(self.dim)
        val, g_beta = self.prior.accuracy.logpdf_grad(beta)
        pv, pg, p = _prev_terms(lp, self.prior.prev_prior)
        val += pv
        if self._y is not None:
            uj, ug, u = _u_terms(v)
            Ls = np.stack([chols[0].L, chols[1].L])
            log1mp = -float(_softplus(lp))
            logp = -float(_softplus(-lp))
            ll, gl_beta, g_L, g_u, g_logit = _mvp_kernel(
                self._y, np.ascontiguousarray(beta), Ls, log1mp, logp, u.reshape(self.N, T), True
            )
            val += ll + uj
            g_beta = g_beta + gl_beta
            pg += g_logit
            grad[self.n_core:] = g_u.ravel() * u * (1.0 - u) + ug
        else:
            g_L = np.zeros((2, T, T))
        grad[: 2 * T] = g_beta.ravel()
        grad[2 * T] = pg
        o = 2 * T + 1
        for d, raw in enumerate((raw1, raw2)):
            L = chols[d].L
            eta = self.etas[d]
            diag = np.diag(L)[1:]
            val += 2.0 * (eta - 1.0) * float(np.sum(np.log(diag)))
            gd = g_L[d].copy()
            idx = np.arange(1, T)
            gd[idx, idx] += 2.0 * (eta - 1.0) / diag
            c, graw = chol_from_raw_vjp(raw, self.bounds[d], gd, 1.0)
            val += c.log_jacobian
            grad[o + d * self.m: o + (d + 1) * self.m] = graw
        return float(val), grad

    def initial_point(self):
        x = np.zeros(self.dim)
        T = self.T
        x[: 2 * T] = self.prior.accuracy.mean.ravel()
        x[2 * T] = _logit(_INIT_PREV)
        x[2 * T + 1: self.n_core] = _INIT_RAW_CORR
        return x

    def swap_classes(self, x):
        y = super().swap_classes(x)
        T, m = self.T, self.m
        o = 2 * T + 1
        y[2 * T] = -x[2 * T]
        y[o: o + m], y[o + m: o + 2 * m] = x[o + m: o + 2 * m], x[o: o + m]
        return y

    def param_names(self):
        corr = [f"raw_corr[{d + 1},{k + 1}]" for d in range(2) for k in range(self.m)]
        return self._acc_names("beta") + ["logit_prev"] + corr + self._u_names()

    def corr_draws(self, core_draws):
        il = np.tril_indices(self.T, -1)
        T, m = self.T, self.m
        o = 2 * T + 1
        out = np.empty((2, core_draws.shape[0], m))
        for i, x in enumerate(core_draws):
            for d in range(2):
                L = chol_from_raw(x[o + d * m: o + (d + 1) * m], self.bounds[d]).L
                out[d, i] = (L @ L.T)[il]
        return out

    def derived(self, core_draws):
        T = self.T
        beta = core_draws[:, : 2 * T].reshape(-1, 2, T)
        c = self.corr_draws(core_draws)
        se, sp, prev, c1, c2, swap = relabel(
            ndtr(beta[:, 1]), ndtr(-beta[:, 0]), 1 / (1 + np.exp(-core_draws[:, 2 * T])), c[0], c[1]
        )
        return {"se": se, "sp": sp, "prev": prev, "corr1": c1, "corr2": c2, "swapped": swap}


class LatentTraitTarget(Target):
    """x = [a (2T) | log b (2T) | logit p | logit u (N*T)].

    The accuracy prior is placed on ``theta = a / sqrt(1 + b^2)`` and the
    Jacobian of ``theta -> a`` is included.
    """

    model = "lt"

    def __init__(self, data, prior):
        super().__init__(data, prior)
        T = self.T
        self.n_core = 4 * T + 1
        self.dim = self.n_core + self.N * T
        self._y = None if data is None else data.y

    def logp_grad(self, x):
        T = self.T
        a = x[: 2 * T].reshape(2, T)
        logb = x[2 * T: 4 * T].reshape(2, T)
        b = np.exp(logb)
        lp = float(x[4 * T])
        s2 = 1.0 + b * b
        rs = 1.0 / np.sqrt(s2)
        theta = a * rs
        c = b * rs
        val, g_theta = self.prior.accuracy.logpdf_grad(theta)
        val += float(np.sum(-0.5 * np.log(s2)))
        bv, g_b = self.prior.b_prior.logpdf_grad(b)
        val += bv + float(np.sum(logb))
        g_b = g_b - b / s2
        pv, pg, p = _prev_terms(lp, self.prior.prev_prior)
        val += pv
        g_c = np.zeros((2, T))
        grad = np.empty(self.dim)
        if self._y is not None:
            v = x[self.n_core:]
            uj, ug, u = _u_terms(v)
            Ls = np.empty((2, T, T))
            for d in range(2):
                Ls[d] = np.linalg.cholesky(lt_corr(b[d]))
            log1mp = -float(_softplus(lp))
            logp = -float(_softplus(-lp))
            ll, gl_beta, g_L, g_u, g_logit = _mvp_kernel(
                self._y, np.ascontiguousarray(theta), Ls, log1mp, logp, u.reshape(self.N, T), True
            )
            val += ll + uj
            g_theta = g_theta + gl_beta
            pg += g_logit
            for d in range(2):
                ob = corr_chol_vjp(Ls[d], g_L[d])
                g_c[d] = (ob + ob.T) @ c[d]
            grad[self.n_core:] = g_u.ravel() * u * (1.0 - u) + ug
        g_a = g_theta * rs
        g_b = g_b + g_theta * (-a * b * rs / s2) + g_c * rs / s2
        grad[: 2 * T] = g_a.ravel()
        grad[2 * T: 4 * T] = (g_b * b + 1.0).ravel()
        grad[4 * T] = pg
        return float(val), grad

    def initial_point(self):
        T = self.T
        bp = self.prior.b_prior
        # loadings start at their prior medians
        if bp.family == "weibull":
            med = np.array([s * math.log(2.0) ** (1.0 / k) for k, s in zip(bp.shape, bp.scale)])
        else:
            med = np.array([_gamma_dist(k, scale=s).median() for k, s in zip(bp.shape, bp.scale)])
        b = np.repeat(med[:, None], T, axis=1)
        a = self.prior.accuracy.mean * np.sqrt(1.0 + b * b)
        x = np.zeros(self.dim)
        x[: 2 * T] = a.ravel()
        x[2 * T: 4 * T] = np.log(b).ravel()
        x[4 * T] = _logit(_INIT_PREV)
        return x

    def swap_classes(self, x):
        y = super().swap_classes(x)
        T = self.T
        y[2 * T: 3 * T], y[3 * T: 4 * T] = x[3 * T: 4 * T], x[2 * T: 3 * T]
        y[4 * T] = -x[4 * T]
        return y

    def param_names(self):
        return self._acc_names("a") + self._acc_names("log_b") + ["logit_prev"] + self._u_names()

    def derived(self, core_draws):
        T = self.T
        a = core_draws[:, : 2 * T].reshape(-1, 2, T)
        b = np.exp(core_draws[:, 2 * T: 4 * T].reshape(-1, 2, T))
        theta = a / np.sqrt(1.0 + b * b)
        c = b / np.sqrt(1.0 + b * b)
        il = np.tril_indices(T, -1)
        corr = [(c[:, d, :, None] * c[:, d, None, :])[:, il[0], il[1]] for d in range(2)]
        se, sp, prev, c1, c2, swap = relabel(
            ndtr(theta[:, 1]), ndtr(-theta[:, 0]), 1 / (1 + np.exp(-core_draws[:, 4 * T])), corr[0], corr[1]
        )
        return {"se": se, "sp": sp, "prev": prev, "corr1": c1, "corr2": c2, "swapped": swap}


class CorrTarget:
    """LKJ(eta) density over one correlation matrix with element bounds.

    x holds the raw correlation parameters; the density includes the
    log-Jacobian of the raw-to-correlation map, so draws of Omega follow
    LKJ(eta) restricted to the bounds.
    """

    def __init__(self, eta: float, bounds):
        self.eta = float(eta)
        self.bounds = bounds
        self.T = bounds.dim
        self.dim = self.n_core = n_raw(self.T)

    def logp_grad(self, x):
        T = self.T
        try:
            L = chol_from_raw(x, self.bounds).L
        except InfeasibleBoundsError:
            return -math.inf, np.zeros(self.dim)
        diag = np.diag(L)[1:]
        val = 2.0 * (self.eta - 1.0) * float(np.sum(np.log(diag)))
        gd = np.zeros((T, T))
        idx = np.arange(1, T)
        gd[idx, idx] = 2.0 * (self.eta - 1.0) / diag
        c, graw = chol_from_raw_vjp(x, self.bounds, gd, 1.0)
        return val + c.log_jacobian, graw

    def initial_point(self):
        return np.full(self.dim, _INIT_RAW_CORR)

    def param_names(self):
        return [f"raw_corr[{k + 1}]" for k in range(self.dim)]

    def derived(self, core_draws):
        il = np.tril_indices(self.T, -1)
        out = np.empty((core_draws.shape[0], self.dim))
        for i, x in enumerate(core_draws):
            L = chol_from_raw(x, self.bounds).L
            out[i] = (L @ L.T)[il]
        return {"corr": out}


def make_target(model: str, data: BinaryDataset | None, prior: PriorSet) -> Target:
    cls = {"ci": CiTarget, "mvp": MvpTarget, "lt": LatentTraitTarget}.get(model)
    if cls is None:
        raise ValueError(f"unknown model {model!r}")
    return cls(data, prior)
