"""Adaptive Hamiltonian Monte Carlo with jittered trajectory lengths.

Each chain runs independently with its own random stream.  Warmup follows
the usual windowed scheme: an initial buffer for step size only, a run of
doubling windows that estimate a diagonal inverse metric, and a terminal
buffer that re-tunes the step size.  Step size is tuned by dual averaging
towards a target acceptance rate.  The integration time ``tau`` is tuned
during warmup by stochastic gradient ascent (Adam on ``log tau``) on the
change-in-estimator-of-expected-square criterion, computed per chain in
metric-whitened coordinates against a running mean.  Each iteration then
takes ``round(h * tau / eps)`` leapfrog steps with ``h`` uniform on
``[1 - jitter, 1 + jitter]``.

Targets with two exchangeable latent classes may expose ``swap_classes``;
each iteration then also proposes the relabelled state in a Metropolis
step, which lets chains move between the mirrored posterior modes.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HmcConfig",
    "PosteriorSamples",
    "Diagnostics",
    "NonFiniteInitError",
    "DivergenceError",
    "leapfrog",
    "run_chains",
    "ess",
    "split_rhat",
    "summarize",
    "write_draws_csv",
]

DIVERGENCE_THRESHOLD = 1000.0


class NonFiniteInitError(RuntimeError):
    """The log density or its gradient is not finite at the initial point."""


class DivergenceError(RuntimeError):
    """More than the allowed fraction of sampling iterations diverged."""


@dataclass(frozen=True)
class HmcConfig:
    n_chains: int = 4
    n_warmup: int = 1000
    n_samples: int = 1000
    target_accept: float = 0.8
    max_steps: int = 256
    jitter: float = 0.5
    seed: int = 0
    init_tau: float = 1.0
    adapt_tau: bool = True
    max_divergent_frac: float = 0.5
    keep_all: bool = False
    label_swap: bool = True

    def __post_init__(self):
        if self.n_chains < 1 or self.n_warmup < 0 or self.n_samples < 1:
            raise ValueError("need n_chains >= 1, n_warmup >= 0 and n_samples >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must lie in [0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d) -> "HmcConfig":
        return cls(**d)


@dataclass
class PosteriorSamples:
    """Draws on the unconstrained scale and derived quantities.

    ``draws`` has shape (chains, iterations, n_kept) where only the first
    ``n_kept`` coordinates (all but the GHK uniforms, unless ``keep_all``)
    are stored.  ``derived`` maps names such as ``se`` to arrays of shape
    (chains, iterations, ...).
    """

    draws: np.ndarray
    names: list[str]
    derived: dict
    divergent: np.ndarray
    accept_prob: np.ndarray
    n_steps: np.ndarray
    step_size: np.ndarray
    tau: np.ndarray
    inv_metric: np.ndarray

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_iter(self) -> int:
        return self.draws.shape[1]

    def flat(self, name: str) -> np.ndarray:
        a = self.derived[name]
        return a.reshape(-1, *a.shape[2:])


@dataclass
class Diagnostics:
    ess: dict
    rhat: dict
    n_divergent: int
    min_ess: float
    max_rhat: float
    wall_time: float
    sampling_time: float
    n_grad: int
    time_to_ess1000: float = field(default=float("nan"))

    def snapshot(self) -> dict:
        """Deterministic subset (no timings)."""
        return {
            "n_divergent": int(self.n_divergent),
            "min_ess": float(self.min_ess),
            "max_rhat": float(self.max_rhat),
            "n_grad": int(self.n_grad),
        }


# --------------------------------------------------------------------------
# integrator


def leapfrog(position, momentum, eps, grad_fn, inv_metric=None):
    """One leapfrog step.  ``grad_fn`` returns the gradient of the log density."""
    im = 1.0 if inv_metric is None else inv_metric
    p = momentum + 0.5 * eps * grad_fn(position)
    q = position + eps * im * p
    p = p + 0.5 * eps * grad_fn(q)
    return q, p


def _trajectory(q, p, g, eps, n, logp_grad, inv_metric):
    """``n`` leapfrog steps sharing gradient evaluations.

    Returns (q, p, logp, grad, finite).
    """
    p = p + 0.5 * eps * g
    lp = -math.inf
    for i in range(n):
        q = q + eps * inv_metric * p
        # overflow on wild trajectories is reported as a divergence, not a warning
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lp, g = logp_grad(q)
        if not math.isfinite(lp) or not np.all(np.isfinite(g)):
            return q, p, -math.inf, g, False
        if i < n - 1:
            p = p + eps * g
    p = p + 0.5 * eps * g
    return q, p, lp, g, True


# --------------------------------------------------------------------------
# adaptation helpers


class _DualAveraging:
    def __init__(self, eps0, delta, gamma=0.05, t0=10.0, kappa=0.75):
        self.delta, self.gamma, self.t0, self.kappa = delta, gamma, t0, kappa
        self.restart(eps0)

    def restart(self, eps0):
        self.mu = math.log(10.0 * eps0)
        self.hbar = 0.0
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.hbar = (1 - w) * self.hbar + w * (self.delta - accept)
        self.log_eps = self.mu - math.sqrt(m) / self.gamma * self.hbar
        mk = m ** (-self.kappa)
        self.log_eps_bar = mk * self.log_eps + (1 - mk) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


class _Adam:
    def __init__(self, lr=0.025, b1=0.0, b2=0.95, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = 0.0
        self.v = 0.0
        self.t = 0

    def step(self, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1**self.t) if self.b1 > 0 else self.m
        vh = self.v / (1 - self.b2**self.t)
        return self.lr * mh / (math.sqrt(vh) + self.eps)


def _windows(n_warmup: int) -> list[int]:
    """Iteration indices (exclusive ends) at which metric windows close."""
    init, term, base = 75, 50, 25
    if n_warmup < 20:
        return []
    if init + term + base > n_warmup:
        init = int(0.15 * n_warmup)
        term = int(0.1 * n_warmup)
        base = n_warmup - init - term
    ends = []
    start = init
    size = base
    last = n_warmup - term
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start = end
        size *= 2
    return ends


def _find_reasonable_eps(q, lp, g, inv_metric, logp_grad, rng, eps=0.1):
    p = rng.standard_normal(q.size) / np.sqrt(inv_metric)
    h0 = lp - 0.5 * np.sum(inv_metric * p * p)

    def log_ratio(e):
        q1, p1, lp1, _, ok = _trajectory(q, p, g, e, 1, logp_grad, inv_metric)
        if not ok:
            return -math.inf
        return lp1 - 0.5 * np.sum(inv_metric * p1 * p1) - h0

    r = log_ratio(eps)
    direction = 1 if r > math.log(0.5) else -1
    for _ in range(100):
        nxt = eps * (2.0 ** direction)
        r = log_ratio(nxt)
        if direction == 1 and not r > math.log(0.5):
            break
        if direction == -1 and r > math.log(0.5):
            eps = nxt
            break
        eps = nxt
    return eps


# --------------------------------------------------------------------------
# single chain


def _run_chain(target, cfg: HmcConfig, rng: np.random.Generator, x0: np.ndarray):
    dim = target.dim
    n_keep = dim if cfg.keep_all else target.n_core
    q = x0.copy()
    lp, g = target.logp_grad(q)
    if not math.isfinite(lp) or not np.all(np.isfinite(g)):
        raise NonFiniteInitError("log density is not finite at the initial point")
    inv_metric = np.ones(dim)
    n_grad = 1
    eps = _find_reasonable_eps(q, lp, g, inv_metric, target.logp_grad, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    log_tau = math.log(cfg.init_tau)
    adam = _Adam()
    tau_trace = []
    swap = getattr(target, "swap_classes", None) if cfg.label_swap else None
    ends = _windows(cfg.n_warmup)
    win_lo = _first_window_start(cfg.n_warmup)
    win_sum = np.zeros(dim)
    win_sq = np.zeros(dim)
    win_n = 0
    mean_run = q.copy()
    mean_n = 0

    total = cfg.n_warmup + cfg.n_samples
    draws = np.empty((cfg.n_samples, n_keep))
    div = np.zeros(cfg.n_samples, dtype=bool)
    acc = np.zeros(cfg.n_samples)
    nst = np.zeros(cfg.n_samples, dtype=np.int64)
    end_set = set(ends)
    t_sample = None
    for it in range(total):
        warm = it < cfg.n_warmup
        if it == cfg.n_warmup:
            eps = da.final if cfg.n_warmup > 0 else eps
            if tau_trace:
                keep = tau_trace[len(tau_trace) // 2:]
                log_tau = float(np.mean(keep))
            t_sample = time.perf_counter()
        tau = math.exp(log_tau)
        h = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter) if cfg.jitter > 0 else 1.0
        n = int(min(max(round(h * tau / eps), 1), cfg.max_steps))
        p = rng.standard_normal(dim) / np.sqrt(inv_metric)
        h0 = -lp + 0.5 * np.sum(inv_metric * p * p)
        q1, p1, lp1, g1, ok = _trajectory(q, p, g, eps, n, target.logp_grad, inv_metric)
        n_grad += n
        if ok:
            h1 = -lp1 + 0.5 * np.sum(inv_metric * p1 * p1)
            dh = h1 - h0
            ok = math.isfinite(dh) and dh < DIVERGENCE_THRESHOLD
        a = math.exp(min(0.0, -dh)) if ok else 0.0
        divergent = not ok
        if warm and cfg.adapt_tau and ok and a > 0.0:
            # trajectory-length gradient in whitened coordinates
            d0 = q - mean_run
            d1 = q1 - mean_run
            s0 = np.sum(d0 * d0 / inv_metric)
            s1 = np.sum(d1 * d1 / inv_metric)
            grad_tau = a * (s1 - s0) * float(np.dot(d1, p1)) * h
            log_tau += adam.step(grad_tau * tau)
            log_tau = min(max(log_tau, math.log(eps)), math.log(cfg.max_steps * eps))
            tau_trace.append(log_tau)
        if rng.uniform() < a:
            q, lp, g = q1, lp1, g1
        if swap is not None:
            qs = swap(q)
            lps, gs = target.logp_grad(qs)
            n_grad += 1
            if math.isfinite(lps) and math.log(rng.uniform()) < lps - lp:
                q, lp, g = qs, lps, gs
        if warm:
            eps = da.update(a)
            mean_n += 1
            mean_run += (q - mean_run) / min(mean_n, 50)
            if win_lo is not None and it >= win_lo:
                win_sum += q
                win_sq += q * q
                win_n += 1
            if (it + 1) in end_set:
                var = win_sq / win_n - (win_sum / win_n) ** 2
                var = np.maximum(var, 0.0)
                inv_metric = (win_n / (win_n + 5.0)) * var + 1e-3 * (5.0 / (win_n + 5.0))
                win_sum[:] = 0.0
                win_sq[:] = 0.0
                win_n = 0
                win_lo = it + 1
                eps = _find_reasonable_eps(q, lp, g, inv_metric, target.logp_grad, rng, eps)
                da.restart(eps)
        else:
            k = it - cfg.n_warmup
            draws[k] = q[:n_keep]
            div[k] = divergent
            acc[k] = a
            nst[k] = n
    sampling_time = time.perf_counter() - t_sample if t_sample is not None else 0.0
    return {
        "draws": draws,
        "divergent": div,
        "accept": acc,
        "n_steps": nst,
        "eps": eps,
        "tau": math.exp(log_tau),
        "inv_metric": inv_metric,
        "n_grad": n_grad,
        "sampling_time": sampling_time,
    }


def _first_window_start(n_warmup: int):
    if n_warmup < 20:
        return None
    if 75 + 50 + 25 > n_warmup:
        return int(0.15 * n_warmup)
    return 75


# --------------------------------------------------------------------------
# multi-chain driver


def run_chains(target, cfg: HmcConfig, init: np.ndarray | None = None):
    """Run ``cfg.n_chains`` independent adaptive HMC chains on ``target``.

    Returns (PosteriorSamples, Diagnostics).

    Raises:
        NonFiniteInitError: the initial point has non-finite density.
        DivergenceError: more than ``cfg.max_divergent_frac`` of sampling
            iterations diverged.
    """
    t0 = time.perf_counter()
    x0 = target.initial_point() if init is None else np.asarray(init, dtype=float)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    results = [_run_chain(target, cfg, np.random.default_rng(s), x0) for s in streams]
    draws = np.stack([r["draws"] for r in results])
    divergent = np.stack([r["divergent"] for r in results])
    n_div = int(divergent.sum())
    if n_div > cfg.max_divergent_frac * divergent.size:
        raise DivergenceError(f"{n_div} of {divergent.size} sampling iterations diverged")
    flat = draws.reshape(-1, draws.shape[-1])
    derived = target.derived(flat)
    derived = {k: v.reshape(cfg.n_chains, cfg.n_samples, *v.shape[1:]) for k, v in derived.items()}
    names = target.param_names()[: draws.shape[-1]]
    samples = PosteriorSamples(
        draws=draws,
        names=names,
        derived=derived,
        divergent=divergent,
        accept_prob=np.stack([r["accept"] for r in results]),
        n_steps=np.stack([r["n_steps"] for r in results]),
        step_size=np.array([r["eps"] for r in results]),
        tau=np.array([r["tau"] for r in results]),
        inv_metric=np.stack([r["inv_metric"] for r in results]),
    )
    ess_d, rhat_d = {}, {}
    # summary quantities if the target defines them, else whatever it derives
    keys = [k for k in ("se", "sp", "prev") if k in derived]
    keys = keys or [k for k in derived if k != "swapped"]
    source = dict(derived) if keys else {"draws": draws}
    for key in keys or ["draws"]:
        arr = source[key]
        if arr.ndim == 2:
            ess_d[key] = ess(arr)
            rhat_d[key] = split_rhat(arr)
        else:
            ess_d[key] = np.array([ess(arr[..., j]) for j in range(arr.shape[-1])])
            rhat_d[key] = np.array([split_rhat(arr[..., j]) for j in range(arr.shape[-1])])
    all_ess = np.concatenate([np.atleast_1d(v) for v in ess_d.values()])
    all_rhat = np.concatenate([np.atleast_1d(v) for v in rhat_d.values()])
    min_ess = float(np.min(all_ess)) if all_ess.size else float("nan")
    sampling_time = float(sum(r["sampling_time"] for r in results))
    diag = Diagnostics(
        ess=ess_d,
        rhat=rhat_d,
        n_divergent=n_div,
        min_ess=min_ess,
        max_rhat=float(np.max(all_rhat)) if all_rhat.size else float("nan"),
        wall_time=time.perf_counter() - t0,
        sampling_time=sampling_time,
        n_grad=int(sum(r["n_grad"] for r in results)),
        time_to_ess1000=sampling_time * 1000.0 / min_ess if min_ess > 0 else float("inf"),
    )
    return samples, diag


# --------------------------------------------------------------------------
# diagnostics


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    ac = np.fft.irfft(f * np.conj(f), m)[:n] / n
    return ac


def ess(series) -> float:
    """Effective sample size (multi-chain, Geyer initial monotone sequence).

    ``series`` is 1-D (one chain) or 2-D (chains x draws).  The result is
    capped at the total number of draws.
    """
    x = np.atleast_2d(np.asarray(series, dtype=float))
    m, n = x.shape
    if n < 4:
        raise ValueError("need at least 4 draws per chain")
    total = m * n
    if np.all(x == x.flat[0]) or np.allclose(x.var(axis=1), 0.0, atol=0.0):
        return float(total)
    acov = np.stack([_autocov(c) for c in x])
    chain_mean = x.mean(axis=1)
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum adjacent pairs while positive, enforce monotone decrease
    t = 0
    pair_sums = []
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pair_sums.append(s)
        t += 2
    ps = np.minimum.accumulate(np.array(pair_sums)) if pair_sums else np.array([1.0])
    tau = -1.0 + 2.0 * ps.sum()
    tau = max(tau, 1.0 / math.log10(total))
    return float(min(total / tau, total))


def split_rhat(chains) -> float:
    """Split-chain potential scale reduction factor."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    if n < 4:
        raise ValueError("need at least 4 draws per chain")
    half = n // 2
    parts = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    if np.all(parts == parts.flat[0]):
        return 1.0
    nn = parts.shape[1]
    means = parts.mean(axis=1)
    w = parts.var(axis=1, ddof=1).mean()
    b = nn * means.var(ddof=1)
    if w == 0:
        return float("inf") if b > 0 else 1.0
    var_plus = (nn - 1) / nn * w + b / nn
    return float(math.sqrt(var_plus / w))


def summarize(values, quantity: str | None = None):
    """Posterior median and central 95% interval.

    ``values`` is either an array of draws (draws on axis 0, after
    flattening chains) or a :class:`PosteriorSamples` together with the name
    of a derived quantity.  Returns (median, q2.5, q97.5).
    """
    if isinstance(values, PosteriorSamples):
        arr = values.flat(quantity)
    else:
        arr = np.asarray(values, dtype=float)
        if arr.ndim >= 2 and quantity == "chains":
            arr = arr.reshape(-1, *arr.shape[2:])
    if arr.shape[0] < 100:
        raise ValueError("need at least 100 draws to summarize")
    q = np.quantile(arr, [0.5, 0.025, 0.975], axis=0)
    return q[0], q[1], q[2]


def write_draws_csv(samples: PosteriorSamples, path) -> None:
    """One row per draw: chain, iteration, divergence flag, parameters, derived."""
    C, S, _ = samples.draws.shape
    extra_names = []
    extra_cols = []
    for key, arr in samples.derived.items():
        if key == "swapped":
            continue
        a = arr.reshape(C, S, -1)
        extra_names += [f"{key}[{j + 1}]" for j in range(a.shape[-1])] if a.shape[-1] > 1 or arr.ndim > 2 else [key]
        extra_cols.append(a)
    extra = np.concatenate(extra_cols, axis=-1) if extra_cols else np.zeros((C, S, 0))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iter", "divergent", *samples.names, *extra_names])
        for c in range(C):
            for s in range(S):
                row = [c + 1, s + 1, int(samples.divergent[c, s])]
                row += [f"{v:.6g}" for v in samples.draws[c, s]]
                row += [f"{v:.6g}" for v in extra[c, s]]
                w.writerow(row)
