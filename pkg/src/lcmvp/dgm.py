"""The five data-generating mechanisms and dataset simulation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .likelihood import BinaryDataset, lt_corr

__all__ = [
    "DgmSpec",
    "LT_LOADINGS",
    "dgm_spec",
    "mu_from_accuracy",
    "half_b_nondiseased",
    "simulate_dataset",
    "write_dataset_csv",
    "read_dataset_csv",
]

PREVALENCE = 0.20
LT_LOADINGS = np.array([0.40, 0.75, 1.10, 0.80, 1.25])

_SE_1 = (0.65, 0.55, 0.60, 0.65, 0.70)
_SP_1 = (0.99, 0.95, 0.90, 0.90, 0.85)
_SE_2 = (0.925, 0.86, 0.87, 0.91, 0.86)
_SP_2 = (0.95, 0.81, 0.70, 0.67, 0.85)

# printed to 3 decimals; diseased class generated by b, non-diseased by b/2
_VARIED_D = np.array([
    [1.00, 0.223, 0.275, 0.232, 0.29],
    [0.223, 1.00, 0.444, 0.375, 0.469],
    [0.275, 0.444, 1.00, 0.462, 0.578],
    [0.232, 0.375, 0.462, 1.00, 0.488],
    [0.29, 0.469, 0.578, 0.488, 1.00],
])
_VARIED_ND = np.array([
    [1.00, 0.069, 0.095, 0.073, 0.104],
    [0.069, 1.00, 0.169, 0.130, 0.186],
    [0.095, 0.169, 1.00, 0.179, 0.255],
    [0.073, 0.130, 0.179, 1.00, 0.197],
    [0.104, 0.186, 0.255, 0.197, 1.00],
])
_HIGHLY_VARIED_D = np.array([
    [1.0, 0.10, 0.10, 0.10, 0.10],
    [0.10, 1.0, 0.50, 0.25, 0.15],
    [0.10, 0.50, 1.0, 0.40, 0.35],
    [0.10, 0.25, 0.40, 1.0, 0.65],
    [0.10, 0.15, 0.35, 0.65, 1.0],
])


def _halve_offdiag(m: np.ndarray) -> np.ndarray:
    out = 0.5 * m
    np.fill_diagonal(out, 1.0)
    return out


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DgmSpec:
    """A fully specified truth.  ``omega[0]`` is non-diseased, ``omega[1]`` diseased."""

    id: int
    true_se: np.ndarray
    true_sp: np.ndarray
    prevalence: float
    omega: tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        se = _frozen(self.true_se)
        sp = _frozen(self.true_sp)
        if se.shape != sp.shape or se.ndim != 1:
            raise ValueError("se and sp must be equal-length vectors")
        if np.any((se <= 0) | (se >= 1) | (sp <= 0) | (sp >= 1)):
            raise ValueError("accuracies must lie in (0, 1)")
        if not 0.0 <= self.prevalence <= 1.0:
            raise ValueError("prevalence must lie in [0, 1]")
        om = tuple(_frozen(o) for o in self.omega)
        for o in om:
            if o.shape != (se.size, se.size) or not np.allclose(np.diag(o), 1.0):
                raise ValueError("omega must be T x T with unit diagonal")
            if np.linalg.eigvalsh(o).min() <= 0:
                raise ValueError("omega must be positive definite")
        object.__setattr__(self, "true_se", se)
        object.__setattr__(self, "true_sp", sp)
        object.__setattr__(self, "omega", om)

    @property
    def n_tests(self) -> int:
        return self.true_se.size

    def mu(self) -> np.ndarray:
        return mu_from_accuracy(self.true_se, self.true_sp)


def dgm_spec(id: int) -> DgmSpec:
    """Return DGM ``id`` (1 to 5)."""
    if id not in (1, 2, 3, 4, 5):
        raise ValueError(f"unknown DGM id {id!r}; expected 1..5")
    se, sp = (_SE_1, _SP_1) if id <= 3 else (_SE_2, _SP_2)
    if id == 1:
        omega = (np.eye(5), np.eye(5))
    elif id in (2, 4):
        omega = (_VARIED_ND, _VARIED_D)
    else:
        omega = (_halve_offdiag(_HIGHLY_VARIED_D), _HIGHLY_VARIED_D)
    return DgmSpec(id=id, true_se=se, true_sp=sp, prevalence=PREVALENCE, omega=omega)


def mu_from_accuracy(se, sp) -> np.ndarray:
    """Class mean vectors (2 x T): row 0 non-diseased, row 1 diseased."""
    se = np.asarray(se, dtype=float)
    sp = np.asarray(sp, dtype=float)
    return np.stack([ndtri(1.0 - sp), ndtri(se)])


def half_b_nondiseased(b) -> np.ndarray:
    """Correlation matrix of ``I + (b/2)(b/2)^T``."""
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ValueError("b must be positive")
    return lt_corr(0.5 * b)


def simulate_dataset(spec: DgmSpec, n: int, rng: np.random.Generator,
                     prevalence: float | None = None) -> BinaryDataset:
    """Ancestral simulation: class, then latent normals, then thresholds.

    The true class (1 non-diseased, 2 diseased) is kept in ``meta["d"]``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if prevalence is not None:
        spec = replace(spec, prevalence=prevalence)
    mu = spec.mu()
    chol = [np.linalg.cholesky(o) for o in spec.omega]
    d = (rng.uniform(size=n) < spec.prevalence).astype(np.int64)
    eps = rng.standard_normal((n, spec.n_tests))
    z = np.empty_like(eps)
    for c in (0, 1):
        idx = d == c
        z[idx] = mu[c] + eps[idx] @ chol[c].T
    y = (z > 0).astype(np.int8)
    return BinaryDataset(y, meta={"dgm": spec.id, "d": d + 1})


def write_dataset_csv(data: BinaryDataset, path, include_truth: bool = False) -> None:
    """Header ``subject, t1..tT`` plus an optional ``d`` truth column."""
    truth = data.meta.get("d") if include_truth else None
    if include_truth and truth is None:
        raise ValueError("dataset carries no true class labels")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["subject"] + [f"t{t + 1}" for t in range(data.n_tests)]
        w.writerow(head + (["d"] if include_truth else []))
        for i, row in enumerate(data.y):
            extra = [int(truth[i])] if include_truth else []
            w.writerow([i + 1, *map(int, row), *extra])


def read_dataset_csv(path) -> BinaryDataset:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        head = next(r)
        cols = [j for j, h in enumerate(head) if h.startswith("t") and h[1:].isdigit()]
        if len(cols) < 2:
            raise ValueError(f"{path}: expected test columns t1..tT")
        dcol = head.index("d") if "d" in head else None
        rows, truth = [], []
        for line in r:
            if not line:
                continue
            rows.append([int(line[j]) for j in cols])
            if dcol is not None:
                truth.append(int(line[dcol]))
    meta = {"d": np.array(truth)} if dcol is not None else {}
    return BinaryDataset(np.array(rows, dtype=np.int8), meta=meta)
