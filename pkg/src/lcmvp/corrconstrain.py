"""Correlation matrices with element-wise interval constraints.

A correlation matrix is built row by row through its Cholesky factor.  Each
off-diagonal entry ``Omega[i, j]`` (row-major over the strict lower triangle)
has, given the entries already fixed, a geometric feasible interval that keeps
the matrix positive definite.  That interval is intersected with the user
bounds ``[lb_ij, ub_ij]`` and an unconstrained real is pushed into the
intersection by a scaled logistic map.  The map from the raw vector to the
off-diagonal entries of ``Omega`` is triangular, so its log-Jacobian is the sum
of the scalar log-derivatives.  Any density specified on ``Omega`` (e.g. LKJ)
therefore carries over exactly to the raw space once ``log_jacobian`` is added,
including when some or all entries are truncated.

LKJ sampling uses the onion method; the truncated variant rejects draws from
the untruncated distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "CorrBounds",
    "CorrChol",
    "LkjSpec",
    "InfeasibleBoundsError",
    "RejectionBudgetExceeded",
    "n_raw",
    "chol_from_raw",
    "chol_from_raw_vjp",
    "raw_from_corr",
    "lkj_log_density",
    "sample_lkj",
    "sample_lkj_batch",
    "sample_trunc_lkj",
    "sample_trunc_lkj_batch",
    "marginal_beta_params",
]


class InfeasibleBoundsError(ValueError):
    """The geometric feasible interval and the bounds do not intersect."""


class RejectionBudgetExceeded(RuntimeError):
    """Truncated LKJ rejection sampling ran out of attempts."""


def n_raw(dim: int) -> int:
    return dim * (dim - 1) // 2


@dataclass(frozen=True)
class CorrBounds:
    """Per-element ``(lb, ub)`` limits for the off-diagonal correlations."""

    dim: int
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = np.array(self.lb, dtype=float)
        ub = np.array(self.ub, dtype=float)
        if lb.shape != (self.dim, self.dim) or ub.shape != (self.dim, self.dim):
            raise ValueError(f"bounds must be {self.dim}x{self.dim}")
        # symmetrize from whichever triangle was given, lower wins
        il = np.tril_indices(self.dim, -1)
        lb = _symmetrize(lb, il)
        ub = _symmetrize(ub, il)
        off = ~np.eye(self.dim, dtype=bool)
        if np.any(lb[off] < -1) or np.any(ub[off] > 1) or np.any(lb[off] >= ub[off]):
            raise ValueError("need -1 <= lb < ub <= 1 off the diagonal")
        np.fill_diagonal(lb, 1.0)
        np.fill_diagonal(ub, 1.0)
        lb.flags.writeable = False
        ub.flags.writeable = False
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @classmethod
    def unconstrained(cls, dim: int) -> "CorrBounds":
        return cls(dim, -np.ones((dim, dim)), np.ones((dim, dim)))

    @classmethod
    def positive(cls, dim: int) -> "CorrBounds":
        return cls(dim, np.zeros((dim, dim)), np.ones((dim, dim)))

    @classmethod
    def from_pairs(cls, dim: int, pairs, lower: float = 0.0, upper: float = 1.0) -> "CorrBounds":
        """Constrain only the listed (1-based) test pairs; others stay in (-1, 1)."""
        lb = -np.ones((dim, dim))
        ub = np.ones((dim, dim))
        for a, b in pairs:
            i, j = max(a, b) - 1, min(a, b) - 1
            lb[i, j] = lower
            ub[i, j] = upper
        return cls(dim, lb, ub)

    @property
    def is_unconstrained(self) -> bool:
        off = ~np.eye(self.dim, dtype=bool)
        return bool(np.all(self.lb[off] == -1) and np.all(self.ub[off] == 1))

    def contains(self, omega: np.ndarray) -> bool:
        il = np.tril_indices(self.dim, -1)
        v = omega[il]
        return bool(np.all(v >= self.lb[il]) and np.all(v <= self.ub[il]))

    def to_dict(self) -> dict:
        il = np.tril_indices(self.dim, -1)
        return {
            "dim": self.dim,
            "lower": self.lb[il].tolist(),
            "upper": self.ub[il].tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorrBounds":
        dim = int(d["dim"])
        il = np.tril_indices(dim, -1)
        lb = -np.ones((dim, dim))
        ub = np.ones((dim, dim))
        lb[il] = d["lower"]
        ub[il] = d["upper"]
        return cls(dim, lb, ub)

    def __eq__(self, other):
        if not isinstance(other, CorrBounds):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.lb, other.lb) and np.array_equal(self.ub, other.ub)

    def __hash__(self):
        return hash((self.dim, self.lb.tobytes(), self.ub.tobytes()))


def _symmetrize(m, il):
    # the lower triangle is authoritative
    out = m.copy()
    out.T[il] = m[il]
    return out


@dataclass(frozen=True)
class CorrChol:
    """Cholesky factor of a correlation matrix.

    ``log_jacobian`` is the log-determinant of d(off-diagonal Omega)/d(raw)
    for factors produced by :func:`chol_from_raw`, and 0 for sampled ones.
    """

    dim: int
    L: np.ndarray
    log_jacobian: float = 0.0

    @property
    def omega(self) -> np.ndarray:
        return self.L @ self.L.T

    @classmethod
    def from_corr(cls, omega: np.ndarray) -> "CorrChol":
        omega = np.asarray(omega, dtype=float)
        return cls(omega.shape[0], np.linalg.cholesky(omega), 0.0)

    @classmethod
    def identity(cls, dim: int) -> "CorrChol":
        return cls(dim, np.eye(dim), 0.0)


@dataclass(frozen=True)
class LkjSpec:
    eta: float
    truncated: bool = False

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("LKJ shape eta must be positive")


# --------------------------------------------------------------------------
# compiled transform


@njit(cache=True, nogil=True)
def _log_sigmoid(x):
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@njit(cache=True, nogil=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def _forward(raw, lb, ub, L, lo_t, hi_t, sig_t, sr_t, lo_geom, hi_geom):
    """Fill ``L`` and the tape.  Returns (log_jacobian, status).

    status 0 is success; k > 0 flags an empty interval at raw index k-1;
    k < 0 flags a row whose remaining mass collapsed (row -k-1).
    """
    T = L.shape[0]
    for a in range(T):
        for b in range(T):
            L[a, b] = 0.0
    L[0, 0] = 1.0
    logj = 0.0
    idx = 0
    for i in range(1, T):
        rem = 1.0
        for j in range(i):
            partial = 0.0
            for k in range(j):
                partial += L[i, k] * L[j, k]
            sr = math.sqrt(rem)
            half = sr * L[j, j]
            glo = partial - half
            ghi = partial + half
            if glo >= lb[i, j]:
                lo = glo
                lo_geom[idx] = True
            else:
                lo = lb[i, j]
                lo_geom[idx] = False
            if ghi <= ub[i, j]:
                hi = ghi
                hi_geom[idx] = True
            else:
                hi = ub[i, j]
                hi_geom[idx] = False
            if not hi > lo:
                return logj, idx + 1
            x = raw[idx]
            s = _sigmoid(x)
            omega = lo + (hi - lo) * s
            lij = (omega - partial) / L[j, j]
            L[i, j] = lij
            rem -= lij * lij
            logj += math.log(hi - lo) + _log_sigmoid(x) + _log_sigmoid(-x)
            lo_t[idx] = lo
            hi_t[idx] = hi
            sig_t[idx] = s
            sr_t[idx] = sr
            idx += 1
        if not rem > 0.0:
            return logj, -(i + 1)
        L[i, i] = math.sqrt(rem)
    return logj, 0


@njit(cache=True, nogil=True)
def _backward(L, L_bar, logj_bar, lo_t, hi_t, sig_t, sr_t, lo_geom, hi_geom, raw_bar):
    T = L.shape[0]
    Lb = L_bar.copy()
    for i in range(T - 1, 0, -1):
        lii = L[i, i]
        d = Lb[i, i]
        if d != 0.0:
            for k in range(i):
                Lb[i, k] -= d * L[i, k] / lii
        for j in range(i - 1, -1, -1):
            idx = i * (i - 1) // 2 + j
            ljj = L[j, j]
            lij = L[i, j]
            g = Lb[i, j]
            ob = g / ljj
            pb = -g / ljj
            Lb[j, j] -= g * lij / ljj
            width = hi_t[idx] - lo_t[idx]
            s = sig_t[idx]
            lob = ob * (1.0 - s) - logj_bar / width
            hib = ob * s + logj_bar / width
            raw_bar[idx] += ob * width * s * (1.0 - s) + logj_bar * (1.0 - 2.0 * s)
            glob = lob if lo_geom[idx] else 0.0
            ghib = hib if hi_geom[idx] else 0.0
            pb += glob + ghib
            halfb = ghib - glob
            sr = sr_t[idx]
            Lb[j, j] += halfb * sr
            srb = halfb * ljj
            if srb != 0.0:
                for k in range(j):
                    Lb[i, k] -= srb * L[i, k] / sr
            if pb != 0.0:
                for k in range(j):
                    Lb[i, k] += pb * L[j, k]
                    Lb[j, k] += pb * L[i, k]


@njit(cache=True, nogil=True)
def _transform(raw, lb, ub):
    T = lb.shape[0]
    m = raw.shape[0]
    L = np.empty((T, T))
    lo_t = np.empty(m)
    hi_t = np.empty(m)
    sig_t = np.empty(m)
    sr_t = np.empty(m)
    lo_geom = np.empty(m, dtype=np.bool_)
    hi_geom = np.empty(m, dtype=np.bool_)
    logj, status = _forward(raw, lb, ub, L, lo_t, hi_t, sig_t, sr_t, lo_geom, hi_geom)
    return L, logj, status


@njit(cache=True, nogil=True)
def _transform_vjp(raw, lb, ub, L_bar, logj_bar):
    T = lb.shape[0]
    m = raw.shape[0]
    L = np.empty((T, T))
    lo_t = np.empty(m)
    hi_t = np.empty(m)
    sig_t = np.empty(m)
    sr_t = np.empty(m)
    lo_geom = np.empty(m, dtype=np.bool_)
    hi_geom = np.empty(m, dtype=np.bool_)
    raw_bar = np.zeros(m)
    logj, status = _forward(raw, lb, ub, L, lo_t, hi_t, sig_t, sr_t, lo_geom, hi_geom)
    if status == 0:
        _backward(L, L_bar, logj_bar, lo_t, hi_t, sig_t, sr_t, lo_geom, hi_geom, raw_bar)
    return L, logj, status, raw_bar


def _raise_status(status: int, dim: int):
    if status > 0:
        k = status - 1
        i = int((1 + math.isqrt(1 + 8 * k)) // 2)
        j = k - i * (i - 1) // 2
        raise InfeasibleBoundsError(
            f"empty feasible interval for correlation ({i + 1}, {j + 1}) of a {dim}x{dim} matrix"
        )
    raise InfeasibleBoundsError(f"row {-status} lost positive definiteness (saturated raw value)")


def _check_raw(raw, bounds):
    raw = np.ascontiguousarray(raw, dtype=float)
    if raw.ndim != 1 or raw.shape[0] != n_raw(bounds.dim):
        raise ValueError(
            f"expected {n_raw(bounds.dim)} raw values for dim {bounds.dim}, got shape {raw.shape}"
        )
    return raw


def chol_from_raw(raw, bounds: CorrBounds) -> CorrChol:
    """Map unconstrained reals to a bounded correlation Cholesky factor.

    Raises:
        InfeasibleBoundsError: when an entry's feasible interval, given the
            entries before it, does not meet its bounds.
        ValueError: on a length mismatch between ``raw`` and ``bounds``.
    """
    raw = _check_raw(raw, bounds)
    L, logj, status = _transform(raw, bounds.lb, bounds.ub)
    if status != 0:
        _raise_status(status, bounds.dim)
    return CorrChol(bounds.dim, L, float(logj))


def chol_from_raw_vjp(raw, bounds: CorrBounds, L_bar, logjac_bar: float = 1.0):
    """Pull a cotangent on ``L`` (and on the log-Jacobian) back to ``raw``.

    Returns ``(chol, raw_bar)`` where ``raw_bar`` is the gradient of
    ``sum(L_bar * L) + logjac_bar * log_jacobian`` with respect to ``raw``.
    """
    raw = _check_raw(raw, bounds)
    L, logj, status, raw_bar = _transform_vjp(
        raw, bounds.lb, bounds.ub, np.ascontiguousarray(L_bar, dtype=float), float(logjac_bar)
    )
    if status != 0:
        _raise_status(status, bounds.dim)
    return CorrChol(bounds.dim, L, float(logj)), raw_bar


def raw_from_corr(omega, bounds: CorrBounds) -> np.ndarray:
    """Inverse of :func:`chol_from_raw` for a matrix strictly inside ``bounds``."""
    omega = np.asarray(omega, dtype=float)
    T = bounds.dim
    L = np.linalg.cholesky(omega)
    raw = np.empty(n_raw(T))
    idx = 0
    for i in range(1, T):
        rem = 1.0
        for j in range(i):
            partial = float(L[i, :j] @ L[j, :j])
            half = math.sqrt(rem) * L[j, j]
            lo = max(partial - half, bounds.lb[i, j])
            hi = min(partial + half, bounds.ub[i, j])
            s = (omega[i, j] - lo) / (hi - lo)
            if not 0.0 < s < 1.0:
                raise InfeasibleBoundsError(f"omega[{i + 1},{j + 1}] is outside its feasible interval")
            raw[idx] = math.log(s) - math.log1p(-s)
            rem -= L[i, j] ** 2
            idx += 1
    return raw


def lkj_log_density(c: CorrChol, eta: float) -> float:
    """Unnormalized LKJ log density, ``(eta - 1) * log det Omega``."""
    return 2.0 * (eta - 1.0) * float(np.sum(np.log(np.diag(c.L)[1:])))


def marginal_beta_params(eta: float, T: int) -> tuple[float, float]:
    """Beta shapes of ``(Omega_ij + 1) / 2`` under LKJ(eta) in dimension T."""
    alpha = eta - 1.0 + T / 2.0
    if not alpha > 0:
        raise ValueError(f"eta - 1 + T/2 must be positive, got {alpha}")
    return alpha, alpha


def sample_lkj_batch(eta: float, T: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` onion-method draws of LKJ(eta) Cholesky factors, shape (n, T, T)."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if T < 2:
        raise ValueError("T must be at least 2")
    L = np.zeros((n, T, T))
    L[:, 0, 0] = 1.0
    for i in range(1, T):
        y = rng.beta(i / 2.0, eta + (T - 1 - i) / 2.0, size=n)
        z = rng.standard_normal((n, i))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        L[:, i, :i] = z * np.sqrt(y)[:, None]
        L[:, i, i] = np.sqrt(1.0 - y)
    return L


def sample_lkj(eta: float, T: int, rng: np.random.Generator) -> CorrChol:
    return CorrChol(T, sample_lkj_batch(eta, T, 1, rng)[0], 0.0)


def sample_trunc_lkj_batch(
    eta: float,
    T: int,
    n: int,
    rng: np.random.Generator,
    max_attempts: int = 10**7,
    chunk: int = 100_000,
) -> np.ndarray:
    """Rejection-sample ``n`` LKJ draws with every off-diagonal positive.

    ``max_attempts`` bounds the proposals spent per accepted draw on average,
    i.e. the total budget is ``n * max_attempts``; the cap exists only to stop
    pathological (eta, T) combinations.
    """
    il = np.tril_indices(T, -1)
    out = np.empty((n, T, T))
    got = 0
    tried = 0
    budget = max_attempts * n
    while got < n:
        if tried >= budget:
            raise RejectionBudgetExceeded(
                f"truncated LKJ({eta}, T={T}): {got}/{n} accepted after {tried} proposals"
            )
        m = min(chunk, budget - tried)
        L = sample_lkj_batch(eta, T, m, rng)
        tried += m
        omega = L @ L.transpose(0, 2, 1)
        keep = np.all(omega[:, il[0], il[1]] > 0, axis=1)
        take = L[keep][: n - got]
        out[got:got + take.shape[0]] = take
        got += take.shape[0]
    return out


def sample_trunc_lkj(eta: float, T: int, rng: np.random.Generator, max_attempts: int = 10**7) -> CorrChol:
    il = np.tril_indices(T, -1)
    for _ in range(max_attempts):
        c = sample_lkj(eta, T, rng)
        if np.all(c.omega[il] > 0):
            return c
    raise RejectionBudgetExceeded(f"truncated LKJ({eta}, T={T}) rejected {max_attempts} proposals")
