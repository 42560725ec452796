"""Prior densities, the named prior sets of the simulation study, and the
Weibull fitter that matches a loading prior to a target correlation prior.

Accuracy priors are normals on the probit-scale intercepts (``beta`` for the
CI and LC-MVP models, ``theta = a / sqrt(1 + b^2)`` for the latent trait).
Row 0 always refers to the non-diseased class and row 1 to the diseased one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from .corrconstrain import CorrBounds, LkjSpec, lkj_log_density
from .likelihood import CiParams, LatentTraitParams, MvpParams, theta_from_ab, theta_jacobian_log

__all__ = [
    "AccuracyPrior",
    "BPrior",
    "CorrPrior",
    "PriorSet",
    "PriorFamilyError",
    "WeibullFitError",
    "log_prior",
    "normal_logpdf_grad",
    "builtin_prior_sets",
    "builtin_prior_set",
    "mixed_bounds",
    "implied_corr_samples",
    "fit_equivalent_weibull",
    "N_TESTS",
]

N_TESTS = 5
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class PriorFamilyError(ValueError):
    """A prior set was applied to parameters of a different model."""


class WeibullFitError(RuntimeError):
    """The equivalence fit did not reach an interior optimum."""


def normal_logpdf_grad(x, mean, sd) -> tuple[float, np.ndarray]:
    z = (np.asarray(x, dtype=float) - mean) / sd
    val = float(np.sum(-0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI))
    return val, -z / sd


@dataclass(frozen=True)
class AccuracyPrior:
    """Independent normals on the 2 x T probit intercepts."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        m = np.array(self.mean, dtype=float)
        s = np.array(self.sd, dtype=float)
        if m.shape != s.shape or m.ndim != 2 or m.shape[0] != 2:
            raise ValueError("accuracy prior mean and sd must both be 2 x T")
        if np.any(s <= 0):
            raise ValueError("prior sd must be positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "sd", s)

    @classmethod
    def standard(cls, T: int) -> "AccuracyPrior":
        return cls(np.zeros((2, T)), np.ones((2, T)))

    def logpdf_grad(self, x) -> tuple[float, np.ndarray]:
        return normal_logpdf_grad(x, self.mean, self.sd)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d) -> "AccuracyPrior":
        return cls(np.array(d["mean"]), np.array(d["sd"]))

    def __eq__(self, other):
        return (
            isinstance(other, AccuracyPrior)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.sd, other.sd)
        )


@dataclass(frozen=True)
class BPrior:
    """Prior on latent trait loadings ``b``, one (shape, scale) per class.

    ``gamma`` uses shape k and scale s (density ~ b^(k-1) exp(-b/s));
    ``weibull`` uses shape k and scale lambda.
    """

    family: str
    shape: tuple[float, float]
    scale: tuple[float, float]

    def __post_init__(self):
        if self.family not in ("gamma", "weibull"):
            raise ValueError(f"unknown b-prior family {self.family!r}")
        shape = tuple(float(v) for v in self.shape)
        scale = tuple(float(v) for v in self.scale)
        if len(shape) != 2 or len(scale) != 2 or min(shape) <= 0 or min(scale) <= 0:
            raise ValueError("b-prior needs positive (non-diseased, diseased) shape and scale")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "scale", scale)

    def logpdf_grad(self, b) -> tuple[float, np.ndarray]:
        """Sum of log densities over a 2 x T array and its gradient."""
        b = np.asarray(b, dtype=float)
        k = np.array(self.shape)[:, None]
        s = np.array(self.scale)[:, None]
        logb = np.log(b)
        if self.family == "gamma":
            val = (k - 1) * logb - b / s - k * np.log(s) - gammaln(k)
            grad = (k - 1) / b - 1 / s
        else:
            r = (b / s) ** k
            val = np.log(k / s) + (k - 1) * (logb - np.log(s)) - r
            grad = (k - 1) / b - k * r / b
        return float(np.sum(val)), grad

    def sample(self, cls: int, size, rng: np.random.Generator) -> np.ndarray:
        k, s = self.shape[cls], self.scale[cls]
        if self.family == "gamma":
            return rng.gamma(k, s, size=size)
        return s * rng.weibull(k, size=size)

    def to_dict(self) -> dict:
        return {"family": self.family, "shape": list(self.shape), "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, d) -> "BPrior":
        return cls(d["family"], tuple(d["shape"]), tuple(d["scale"]))


@dataclass(frozen=True)
class CorrPrior:
    """LKJ shape and element bounds for one class."""

    lkj: LkjSpec
    bounds: CorrBounds

    def to_dict(self) -> dict:
        return {"eta": self.lkj.eta, "truncated": self.lkj.truncated, "bounds": self.bounds.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "CorrPrior":
        return cls(LkjSpec(float(d["eta"]), bool(d.get("truncated", False))), CorrBounds.from_dict(d["bounds"]))


@dataclass(frozen=True)
class PriorSet:
    """A complete prior for one model.

    ``corr`` holds (non-diseased, diseased) correlation priors for the
    LC-MVP; ``b_prior`` the loading prior for the latent trait; the CI model
    uses neither.  The prevalence prior is Beta(``prev_prior``).
    """

    name: str
    model: str
    accuracy: AccuracyPrior
    corr: tuple[CorrPrior, CorrPrior] | None = None
    b_prior: BPrior | None = None
    prev_prior: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.model not in ("ci", "lt", "mvp"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.model == "mvp" and (self.corr is None or len(self.corr) != 2):
            raise ValueError("LC-MVP prior set needs two correlation priors")
        if self.model == "lt" and self.b_prior is None:
            raise ValueError("latent trait prior set needs a b-prior")
        a, b = self.prev_prior
        if a <= 0 or b <= 0:
            raise ValueError("prevalence Beta parameters must be positive")
        object.__setattr__(self, "prev_prior", (float(a), float(b)))
        if self.corr is not None:
            object.__setattr__(self, "corr", tuple(self.corr))

    @property
    def n_tests(self) -> int:
        return self.accuracy.mean.shape[1]

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "model": self.model,
            "accuracy": self.accuracy.to_dict(),
            "prev_prior": list(self.prev_prior),
        }
        if self.corr is not None:
            d["corr"] = [c.to_dict() for c in self.corr]
        if self.b_prior is not None:
            d["b_prior"] = self.b_prior.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "PriorSet":
        return cls(
            name=d["name"],
            model=d["model"],
            accuracy=AccuracyPrior.from_dict(d["accuracy"]),
            corr=tuple(CorrPrior.from_dict(c) for c in d["corr"]) if "corr" in d else None,
            b_prior=BPrior.from_dict(d["b_prior"]) if "b_prior" in d else None,
            prev_prior=tuple(d.get("prev_prior", (1.0, 1.0))),
        )


# --------------------------------------------------------------------------
# log prior


def _log_beta_prev(p: float, ab) -> float:
    a, b = ab
    if not 0.0 < p < 1.0:
        return -math.inf
    return (a - 1) * math.log(p) + (b - 1) * math.log1p(-p) + gammaln(a + b) - gammaln(a) - gammaln(b)


def log_prior(params, prior_set: PriorSet, jacobian: bool = False) -> float:
    """Joint log prior density.

    For the latent trait the accuracy prior sits on ``theta`` and the
    ``theta -> a`` Jacobian is always included, so the result is a density
    over ``(a, b)``.  With ``jacobian=True`` the log-Jacobians of the
    unconstrained transforms are added as well: logit for the prevalence,
    log for ``b``, and the stored ``log_jacobian`` of each correlation factor.

    Raises:
        PriorFamilyError: when ``params`` do not belong to ``prior_set.model``.
    """
    model = prior_set.model
    expected = {"ci": CiParams, "mvp": MvpParams, "lt": LatentTraitParams}[model]
    if not isinstance(params, expected):
        raise PriorFamilyError(f"prior set {prior_set.name!r} is for {model}, got {type(params).__name__}")
    p = float(params.prev)
    total = _log_beta_prev(p, prior_set.prev_prior)
    if jacobian:
        total += math.log(p) + math.log1p(-p)
    if model in ("ci", "mvp"):
        total += prior_set.accuracy.logpdf_grad(params.beta)[0]
    if model == "mvp":
        for c, cp in zip(params.chol, prior_set.corr):
            if not cp.bounds.contains(c.omega):
                return -math.inf
            total += lkj_log_density(c, cp.lkj.eta)
            if jacobian:
                total += c.log_jacobian
    if model == "lt":
        a = np.asarray(params.a, dtype=float)
        b = np.asarray(params.b, dtype=float)
        total += prior_set.accuracy.logpdf_grad(theta_from_ab(a, b))[0]
        total += float(np.sum(theta_jacobian_log(b)))
        total += prior_set.b_prior.logpdf_grad(b)[0]
        if jacobian:
            total += float(np.sum(np.log(b)))
    return float(total)


# --------------------------------------------------------------------------
# named prior sets


def _accuracy_prior(dgm_id: int, T: int = N_TESTS) -> AccuracyPrior:
    mean = np.zeros((2, T))
    sd = np.ones((2, T))
    if dgm_id in (1, 2, 3):
        # reference test: Sp prior centred at 0.99, Se prior at Phi(0.385) = 0.65
        mean[0, 0], sd[0, 0] = -2.33, 0.50
        mean[1, 0], sd[1, 0] = 0.385, 0.45
    elif dgm_id in (4, 5):
        mean[0, 0], sd[0, 0] = -1.30, 0.50
        mean[1, 0], sd[1, 0] = 1.30, 0.50
    else:
        raise ValueError(f"unknown DGM id {dgm_id}")
    return AccuracyPrior(mean, sd)


def mixed_bounds(T: int = N_TESTS, free_tests=(1,)) -> CorrBounds:
    """(0, 1) bounds for pairs among the non-reference tests, (-1, 1) otherwise."""
    others = [t for t in range(1, T + 1) if t not in free_tests]
    pairs = [(i, j) for k, i in enumerate(others) for j in others[k + 1:]]
    return CorrBounds.from_pairs(T, pairs, 0.0, 1.0)


def _corr_set(kind: str, eta1: float, eta2: float, T: int) -> tuple[CorrPrior, CorrPrior]:
    if kind == "LKJ":
        bounds = CorrBounds.unconstrained(T)
        trunc = False
    elif kind == "TruncLKJ":
        bounds = CorrBounds.positive(T)
        trunc = True
    elif kind == "mixedLKJ":
        bounds = mixed_bounds(T)
        trunc = False
    else:
        raise ValueError(kind)
    return (CorrPrior(LkjSpec(eta1, trunc), bounds), CorrPrior(LkjSpec(eta2, trunc), bounds))


_ETA_PAIRS = ((10.0, 1.5), (24.0, 4.0))
_B_PRIORS = {
    "Gamma(1,1)": BPrior("gamma", (1.0, 1.0), (1.0, 1.0)),
    "Weibull(1.59/1.45,0.468/0.881)": BPrior("weibull", (1.59, 1.45), (0.468, 0.881)),
    "Weibull(1.52/1.33,0.633/1.25)": BPrior("weibull", (1.52, 1.33), (0.633, 1.25)),
}


def _fmt(x: float) -> str:
    return f"{x:g}"


def builtin_prior_sets(dgm_id: int, model: str, T: int = N_TESTS) -> list[PriorSet]:
    """The prior configurations used in the simulation study for one DGM."""
    acc = _accuracy_prior(dgm_id, T)
    if model == "ci":
        return [PriorSet("CI", "ci", acc)]
    if model == "lt":
        return [PriorSet(name, "lt", acc, b_prior=bp) for name, bp in _B_PRIORS.items()]
    if model == "mvp":
        out = []
        for kind in ("LKJ", "TruncLKJ", "mixedLKJ"):
            for e1, e2 in _ETA_PAIRS:
                out.append(PriorSet(f"{kind}({_fmt(e1)},{_fmt(e2)})", "mvp", acc, corr=_corr_set(kind, e1, e2, T)))
        return out
    raise ValueError(f"unknown model {model!r}")


def builtin_prior_set(dgm_id: int, model: str, name: str, T: int = N_TESTS) -> PriorSet:
    for ps in builtin_prior_sets(dgm_id, model, T):
        if ps.name == name:
            return ps
    known = [p.name for p in builtin_prior_sets(dgm_id, model, T)]
    raise ValueError(f"unknown prior set {name!r} for model {model}; known: {known}")


# --------------------------------------------------------------------------
# loading prior <-> correlation prior


def implied_corr_samples(bp: BPrior, n: int, rng: np.random.Generator, cls: int = 1) -> np.ndarray:
    """Correlations b_i b_j / sqrt((1 + b_i^2)(1 + b_j^2)) for independent b draws."""
    b = bp.sample(cls, (2, n), rng)
    c = b / np.sqrt(1.0 + b * b)
    return c[0] * c[1]


def _silverman(x: np.ndarray, n: int) -> float:
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(np.std(x), iqr / 1.34) if iqr > 0 else np.std(x)
    return 0.9 * spread * n ** (-0.2)


def fit_equivalent_weibull(
    target,
    n_sim: int = 100_000,
    seed: int = 0,
    grid: int = 2048,
    starts=((1.5, 0.7), (1.0, 1.5), (2.5, 0.4)),
) -> tuple[float, float]:
    """Weibull (shape, scale) whose implied correlations best fit ``target``.

    The implied-correlation density for given (shape, scale) is a Gaussian
    kernel estimate built from ``n_sim`` simulated correlations.  Common
    random numbers make it smooth in the parameters, and the bandwidth is
    fixed by Silverman's rule.  The target log-likelihood under that density
    is maximised by Nelder-Mead on the log parameters from several starts.
    The kernel is reflected at 0 and 1.

    Raises:
        ValueError: fewer than 1000 targets, or targets outside (0, 1).
        WeibullFitError: no converged interior optimum.
    """
    target = np.asarray(target, dtype=float).ravel()
    if target.size < 1000:
        raise ValueError("need at least 1000 target samples")
    if np.any(target <= 0) or np.any(target >= 1):
        raise ValueError("target correlations must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    E = rng.standard_exponential((2, n_sim))
    bw = _silverman(target, n_sim)
    edges = np.linspace(0.0, 1.0, grid + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    dx = edges[1] - edges[0]
    diff = centers[:, None] - centers[None, :]
    refl = centers[:, None] + centers[None, :]
    K = (np.exp(-0.5 * (diff / bw) ** 2) + np.exp(-0.5 * (refl / bw) ** 2)
         + np.exp(-0.5 * ((2.0 - refl) / bw) ** 2)) / (bw * math.sqrt(2 * math.pi))
    tcounts = np.bincount(np.minimum((target / dx).astype(int), grid - 1), minlength=grid).astype(float)
    keep = tcounts > 0
    Kt = K[keep]
    tw = tcounts[keep] / target.size

    def nll(logp):
        k, lam = np.exp(logp)
        b = lam * E ** (1.0 / k)
        c = b / np.sqrt(1.0 + b * b)
        x = c[0] * c[1]
        pos = x / dx - 0.5
        i0 = np.floor(pos).astype(int)
        f = pos - i0
        h = (np.bincount(np.clip(i0, 0, grid - 1), 1.0 - f, grid)
             + np.bincount(np.clip(i0 + 1, 0, grid - 1), f, grid))
        dens = Kt @ h / n_sim
        return -float(np.sum(tw * np.log(np.maximum(dens, 1e-300))))

    best = None
    for s in starts:
        r = optimize.minimize(nll, np.log(s), method="Nelder-Mead",
                              options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 4000})
        if r.success and (best is None or r.fun < best.fun):
            best = r
    if best is None:
        raise WeibullFitError("Nelder-Mead did not converge from any start")
    k, lam = np.exp(best.x)
    if not (0.05 < k < 50 and 1e-3 < lam < 1e3):
        raise WeibullFitError(f"optimum on the boundary: shape={k:.3g}, scale={lam:.3g}")
    return float(k), float(lam)
