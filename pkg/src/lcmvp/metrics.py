"""Simulation performance measures with Monte Carlo standard errors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SimRecord",
    "MetricsAccumulator",
    "rmse_with_mcse",
    "bias",
    "coverage",
    "width",
    "adaptive_stop",
    "equivalence_groups",
    "SUMMARY_COLUMNS",
    "write_summary_csv",
]

SUMMARY_COLUMNS = [
    "dgm", "model", "prior", "N", "n_sim",
    "rmse_se", "mcse_rmse_se", "rmse_sp",
    "bias_se", "bias_sp", "cvg_se", "cvg_sp", "width_se", "width_sp",
]


def _check_n(n: int) -> None:
    if n < 2:
        raise ValueError("need at least 2 simulations")


def rmse_with_mcse(estimates, truth) -> tuple[float, float]:
    """RMSE and its Monte Carlo SE, ``rmse / sqrt(2 n)``."""
    e = np.asarray(estimates, dtype=float)
    _check_n(e.size)
    r = math.sqrt(float(np.mean((e - truth) ** 2)))
    return r, r / math.sqrt(2.0 * e.size)


def bias(estimates, truth) -> tuple[float, float]:
    """Mean error and its Monte Carlo SE, ``sd / sqrt(n)``."""
    e = np.asarray(estimates, dtype=float)
    _check_n(e.size)
    return float(np.mean(e) - truth), float(np.std(e, ddof=1) / math.sqrt(e.size))


def coverage(intervals, truth) -> tuple[float, float]:
    """Fraction of (lo, hi) intervals containing ``truth`` and its binomial SE."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    _check_n(len(iv))
    c = float(np.mean((iv[:, 0] <= truth) & (truth <= iv[:, 1])))
    return c, math.sqrt(c * (1.0 - c) / len(iv))


def width(intervals) -> float:
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    _check_n(len(iv))
    return float(np.mean(iv[:, 1] - iv[:, 0]))


@dataclass
class SimRecord:
    """One fitted replicate.  ``se`` and ``sp`` are (T, 3) arrays of
    (median, q2.5, q97.5); ``prev`` is a length-3 array."""

    dgm: int
    model: str
    prior: str
    n: int
    replicate: int
    seed: int
    se: np.ndarray
    sp: np.ndarray
    prev: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    failed: bool = False

    def __post_init__(self):
        for name in ("se", "sp"):
            a = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, a)
            if not self.failed and np.any((a[:, 1] > a[:, 0]) | (a[:, 0] > a[:, 2])):
                raise ValueError(f"{name} quantiles out of order")
        self.prev = np.asarray(self.prev, dtype=float)


class MetricsAccumulator:
    """Running sums per test for RMSE, bias, coverage and width.

    Failed fits are counted but never enter the sums.
    """

    def __init__(self, true_se, true_sp):
        self.true = {"se": np.asarray(true_se, dtype=float), "sp": np.asarray(true_sp, dtype=float)}
        T = self.true["se"].size
        self.n_sim = 0
        self.n_failed = 0
        self._sum = {k: np.zeros(T) for k in ("se", "sp")}
        self._sq = {k: np.zeros(T) for k in ("se", "sp")}
        self._err2 = {k: np.zeros(T) for k in ("se", "sp")}
        self._cov = {k: np.zeros(T) for k in ("se", "sp")}
        self._wid = {k: np.zeros(T) for k in ("se", "sp")}

    def add(self, rec: SimRecord) -> None:
        if rec.failed:
            self.n_failed += 1
            return
        self.add_arrays(rec.se, rec.sp)

    def add_arrays(self, se, sp) -> None:
        """``se``/``sp``: (T, 3) arrays of (median, lo, hi)."""
        self.n_sim += 1
        for k, a in (("se", np.asarray(se, dtype=float)), ("sp", np.asarray(sp, dtype=float))):
            est, lo, hi = a[:, 0], a[:, 1], a[:, 2]
            tr = self.true[k]
            self._sum[k] += est
            self._sq[k] += est * est
            self._err2[k] += (est - tr) ** 2
            self._cov[k] += (lo <= tr) & (tr <= hi)
            self._wid[k] += hi - lo

    def rmse(self, k: str) -> tuple[np.ndarray, np.ndarray]:
        _check_n(self.n_sim)
        r = np.sqrt(self._err2[k] / self.n_sim)
        return r, r / math.sqrt(2.0 * self.n_sim)

    def bias(self, k: str) -> tuple[np.ndarray, np.ndarray]:
        _check_n(self.n_sim)
        n = self.n_sim
        m = self._sum[k] / n
        var = np.maximum(self._sq[k] - n * m * m, 0.0) / (n - 1)
        return m - self.true[k], np.sqrt(var / n)

    def coverage(self, k: str) -> tuple[np.ndarray, np.ndarray]:
        _check_n(self.n_sim)
        c = self._cov[k] / self.n_sim
        return c, np.sqrt(c * (1.0 - c) / self.n_sim)

    def width(self, k: str) -> np.ndarray:
        _check_n(self.n_sim)
        return self._wid[k] / self.n_sim

    def summary(self) -> dict:
        """Test-averaged measures in percent."""
        out = {"n_sim": self.n_sim}
        for k in ("se", "sp"):
            r, m = self.rmse(k)
            out[f"rmse_{k}"] = 100.0 * float(r.mean())
            out[f"mcse_rmse_{k}"] = 100.0 * float(m.mean())
            out[f"bias_{k}"] = 100.0 * float(self.bias(k)[0].mean())
            out[f"cvg_{k}"] = 100.0 * float(self.coverage(k)[0].mean())
            out[f"width_{k}"] = 100.0 * float(self.width(k).mean())
        return out


def adaptive_stop(acc: MetricsAccumulator, threshold: float = 0.0025, nsim_min: int = 30) -> bool:
    """True once the test-averaged MCSE of RMSE(Se) falls below ``threshold``."""
    if acc.n_sim < max(nsim_min, 2):
        return False
    return float(acc.rmse("se")[1].mean()) < threshold


def equivalence_groups(cells) -> tuple[list[int], list[int]]:
    """Split cells into (best, worse) index lists.

    ``cells`` is a sequence of (rmse_total, mcse_total).  The leader has the
    smallest rmse_total; a cell joins the best group when its interval
    ``value +/- 1.96 mcse`` overlaps the leader's.
    """
    c = np.asarray(cells, dtype=float).reshape(-1, 2)
    if len(c) < 1:
        raise ValueError("need at least one cell")
    lead = int(np.argmin(c[:, 0]))
    lead_hi = c[lead, 0] + 1.96 * c[lead, 1]
    best, worse = [], []
    for i, (v, m) in enumerate(c):
        (best if v - 1.96 * m <= lead_hi else worse).append(i)
    return best, worse


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def write_summary_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])
