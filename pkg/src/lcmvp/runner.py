"""Simulation-study orchestration: cells, replicates, persistence, reports.

A study is the product of DGMs, sample sizes, models and prior sets.  Each
cell runs replicates in order until the adaptive stopping rule fires or
``nsim_max`` attempts are used.  Replicates may be fitted in parallel, but
results are consumed in replicate order so output does not depend on the
worker count.  Completed replicates are appended to ``records.csv``; a
re-run reads them back and continues where it stopped.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dgm import dgm_spec, simulate_dataset
from .metrics import (
    SUMMARY_COLUMNS,
    MetricsAccumulator,
    SimRecord,
    adaptive_stop,
    equivalence_groups,
    write_summary_csv,
)
from .posterior import make_target
from .priors import PriorSet, builtin_prior_set, builtin_prior_sets
from .sampler import DivergenceError, HmcConfig, NonFiniteInitError, run_chains, summarize

__all__ = [
    "ConfigError",
    "StudyConfig",
    "fit_dataset",
    "replicate_seed",
    "run_study",
    "render_report",
    "EXIT_OK",
    "EXIT_DEGRADED",
    "EXIT_CONFIG",
    "EXIT_IO",
]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_DEGRADED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
DEGRADED_FRACTION = 0.2
GROUPING_RULE = "best = interval rmse_total +/- 1.96*mcse_total overlaps the leader's interval"
MODELS = ("ci", "lt", "mvp")


class ConfigError(ValueError):
    pass


def _sig6(v: float) -> float:
    return float(f"{v:.6g}")


@dataclass
class StudyConfig:
    dgms: list = field(default_factory=lambda: [1])
    sample_sizes: list = field(default_factory=lambda: [300, 3000])
    models: list = field(default_factory=lambda: ["ci", "mvp"])
    # model -> list of prior-set names; missing model means all builtin sets
    priors: dict = field(default_factory=dict)
    # extra prior sets in PriorSet.to_dict form (e.g. other mixed bounds)
    custom_priors: list = field(default_factory=list)
    nsim_min: int = 30
    nsim_max: int = 1000
    mcse_threshold: float = 0.0025
    hmc: dict = field(default_factory=dict)
    out_dir: str = "study_out"
    master_seed: int = 1
    workers: int = 1

    def __post_init__(self):
        try:
            self.hmc_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad hmc block: {exc}") from exc
        if not self.dgms or any(d not in (1, 2, 3, 4, 5) for d in self.dgms):
            raise ConfigError("dgms must be a non-empty subset of 1..5")
        if not self.sample_sizes or any(int(n) < 1 for n in self.sample_sizes):
            raise ConfigError("sample sizes must be positive")
        if not self.models or any(m not in MODELS for m in self.models):
            raise ConfigError(f"models must be drawn from {MODELS}")
        if not 2 <= self.nsim_min <= self.nsim_max:
            raise ConfigError("need 2 <= nsim_min <= nsim_max")
        if not self.mcse_threshold > 0:
            raise ConfigError("mcse_threshold must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for d in self.custom_priors:
            try:
                PriorSet.from_dict(d)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad custom prior: {exc}") from exc
        for dgm in self.dgms:
            for model in self.models:
                for name in self.priors.get(model, []):
                    self._lookup(dgm, model, name)

    def hmc_config(self) -> HmcConfig:
        return HmcConfig(**self.hmc)

    @classmethod
    def from_json(cls, text: str) -> "StudyConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "StudyConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def _lookup(self, dgm: int, model: str, name: str) -> PriorSet:
        for d in self.custom_priors:
            if d.get("name") == name and d.get("model") == model:
                return PriorSet.from_dict(d)
        try:
            return builtin_prior_set(dgm, model, name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def prior_names(self, dgm: int, model: str) -> list[str]:
        if model in self.priors:
            return list(self.priors[model])
        names = [p.name for p in builtin_prior_sets(dgm, model)]
        names += [d["name"] for d in self.custom_priors if d.get("model") == model]
        return names

    def cells(self) -> list[tuple[int, int, str, str]]:
        return [
            (dgm, int(n), model, name)
            for dgm in self.dgms
            for n in self.sample_sizes
            for model in self.models
            for name in self.prior_names(dgm, model)
        ]


def _cell_key(cell) -> str:
    dgm, n, model, prior = cell
    return f"{dgm}|{n}|{model}|{prior}"


def replicate_seed(master: int, cell, replicate: int) -> int:
    """Seed for replicate ``replicate`` of ``cell``; distinct across cells."""
    tag = zlib.crc32(_cell_key(cell).encode())
    ss = np.random.SeedSequence([int(master), tag, int(replicate)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def fit_dataset(model: str, data, prior: PriorSet, cfg: HmcConfig):
    """Run the sampler for one dataset; returns (samples, diagnostics)."""
    return run_chains(make_target(model, data, prior), cfg)


def _summary_rows(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    out = []
    for key in ("se", "sp"):
        med, lo, hi = summarize(samples, key)
        out.append(np.stack([med, lo, hi], axis=1))
    pm, pl, ph = summarize(samples, "prev")
    return out[0], out[1], np.array([pm, pl, ph])


def _run_replicate(args) -> dict:
    """Worker entry point: simulate, fit and summarize one replicate."""
    cell, r, seed, hmc, prior_dict = args
    dgm, n, model, _ = cell
    spec = dgm_spec(dgm)
    ss = np.random.SeedSequence(seed)
    data_seq, fit_seq = ss.spawn(2)
    data = simulate_dataset(spec, n, np.random.default_rng(data_seq))
    prior = PriorSet.from_dict(prior_dict)
    cfg = HmcConfig(**{**hmc, "seed": int(fit_seq.generate_state(1)[0])})
    t0 = time.perf_counter()
    try:
        samples, diag = fit_dataset(model, data, prior, cfg)
    except (DivergenceError, NonFiniteInitError) as exc:
        return {"replicate": r, "seed": seed, "failed": True, "error": str(exc),
                "wall": time.perf_counter() - t0}
    se, sp, prev = _summary_rows(samples)
    return {
        "replicate": r, "seed": seed, "failed": False,
        "se": se, "sp": sp, "prev": prev, "diag": diag.snapshot(),
        "wall": diag.wall_time, "ess1000": diag.time_to_ess1000,
    }


# --------------------------------------------------------------------------
# records file


def _record_header(T: int) -> list[str]:
    cols = ["dgm", "model", "prior", "N", "replicate", "seed", "failed"]
    for k in ("se", "sp"):
        for stat in ("med", "lo", "hi"):
            cols += [f"{k}_{stat}_{t + 1}" for t in range(T)]
    cols += ["prev_med", "prev_lo", "prev_hi", "n_divergent", "min_ess", "max_rhat"]
    return cols


def _record_row(rec: SimRecord) -> list:
    row = [rec.dgm, rec.model, rec.prior, rec.n, rec.replicate, rec.seed, int(rec.failed)]
    if rec.failed:
        T = rec.se.shape[0]
        return row + [""] * (6 * T + 6)
    for a in (rec.se, rec.sp):
        for j in range(3):
            row += [f"{v:.6g}" for v in a[:, j]]
    row += [f"{v:.6g}" for v in rec.prev]
    dg = rec.diagnostics
    row += [int(dg["n_divergent"]), f"{dg['min_ess']:.6g}", f"{dg['max_rhat']:.6g}"]
    return row


def _parse_record(row: dict, T: int) -> SimRecord:
    failed = row["failed"] == "1"
    base = dict(dgm=int(row["dgm"]), model=row["model"], prior=row["prior"], n=int(row["N"]),
                replicate=int(row["replicate"]), seed=int(row["seed"]), failed=failed)
    if failed:
        nan = np.full((T, 3), np.nan)
        return SimRecord(**base, se=nan, sp=nan, prev=np.full(3, np.nan))
    arr = {}
    for k in ("se", "sp"):
        arr[k] = np.stack([[float(row[f"{k}_{s}_{t + 1}"]) for t in range(T)] for s in ("med", "lo", "hi")], axis=1)
    prev = np.array([float(row[f"prev_{s}"]) for s in ("med", "lo", "hi")])
    diag = {"n_divergent": int(row["n_divergent"]), "min_ess": float(row["min_ess"]),
            "max_rhat": float(row["max_rhat"])}
    return SimRecord(**base, se=arr["se"], sp=arr["sp"], prev=prev, diagnostics=diag)


def _load_records(path: Path, T: int) -> dict:
    out: dict = {}
    if not path.exists():
        return out
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = _parse_record(row, T)
            key = _cell_key((rec.dgm, rec.n, rec.model, rec.prior))
            out.setdefault(key, {})[rec.replicate] = rec
    return out


def _to_record(cell, res: dict, T: int) -> SimRecord:
    dgm, n, model, prior = cell
    if res["failed"]:
        nan = np.full((T, 3), np.nan)
        return SimRecord(dgm, model, prior, n, res["replicate"], res["seed"], nan, nan,
                         np.full(3, np.nan), failed=True)
    r6 = np.vectorize(_sig6)
    dg = {"n_divergent": res["diag"]["n_divergent"], "min_ess": _sig6(res["diag"]["min_ess"]),
          "max_rhat": _sig6(res["diag"]["max_rhat"])}
    return SimRecord(dgm, model, prior, n, res["replicate"], res["seed"], r6(res["se"]), r6(res["sp"]),
                     r6(res["prev"]), diagnostics=dg)


# --------------------------------------------------------------------------
# study loop


def _workers(cfg: StudyConfig) -> int:
    env = os.environ.get("LCMVP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"LCMVP_THREADS must be an integer, got {env!r}")
    return cfg.workers


def _run_cell(cell, cfg: StudyConfig, done: dict, writer, fh, timings, pool, n_workers: int) -> tuple[dict, bool]:
    dgm, n, model, name = cell
    spec = dgm_spec(dgm)
    T = spec.n_tests
    prior = cfg._lookup(dgm, model, name)
    acc = MetricsAccumulator(spec.true_se, spec.true_sp)
    hmc = cfg.hmc_config().to_dict()
    r = 0
    # a wave of fits; results past a stop are discarded unwritten
    batch = n_workers if pool is not None else 1
    stopped = False
    while r < cfg.nsim_max and not stopped:
        todo = [q for q in range(r, min(r + batch, cfg.nsim_max)) if q not in done]
        jobs = [(cell, q, replicate_seed(cfg.master_seed, cell, q), hmc, prior.to_dict()) for q in todo]
        if pool is not None and len(jobs) > 1:
            results = {res["replicate"]: res for res in pool.map(_run_replicate, jobs)}
        else:
            results = {job[1]: _run_replicate(job) for job in jobs}
        for q in range(r, min(r + batch, cfg.nsim_max)):
            if q in done:
                rec = done[q]
            elif q in results:
                rec = _to_record(cell, results[q], T)
                writer.writerow(_record_row(rec))
                fh.flush()
                timings.append((_cell_key(cell), q, results[q]["wall"], results[q].get("ess1000", float("nan"))))
                done[q] = rec
            else:
                break
            acc.add(rec)
            r = q + 1
            if adaptive_stop(acc, cfg.mcse_threshold, cfg.nsim_min):
                stopped = True
                break
    attempts = acc.n_sim + acc.n_failed
    degraded = attempts > 0 and acc.n_failed > DEGRADED_FRACTION * attempts
    row = {"dgm": dgm, "model": model, "prior": name, "N": n}
    if acc.n_sim >= 2:
        row.update(acc.summary())
    else:
        row.update({c: float("nan") for c in SUMMARY_COLUMNS[4:]})
        row["n_sim"] = acc.n_sim
    row["n_failed"] = acc.n_failed
    return row, degraded


def run_study(cfg: StudyConfig) -> int:
    """Run every cell of ``cfg``; returns a process exit status."""
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json() + "\n")
    except OSError as exc:
        log.error("cannot write to %s: %s", out, exc)
        return EXIT_IO
    try:
        n_workers = _workers(cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    T = dgm_spec(cfg.dgms[0]).n_tests
    rec_path = out / "records.csv"
    try:
        existing = _load_records(rec_path, T)
    except (OSError, KeyError, ValueError) as exc:
        log.error("cannot read %s: %s", rec_path, exc)
        return EXIT_IO
    rows, degraded_any = [], False
    timings: list = []
    pool = ProcessPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        new_file = not rec_path.exists()
        with open(rec_path, "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new_file:
                writer.writerow(_record_header(T))
            for cell in cfg.cells():
                done = existing.get(_cell_key(cell), {})
                log.info("cell %s", _cell_key(cell))
                row, degraded = _run_cell(cell, cfg, done, writer, fh, timings, pool, n_workers)
                if degraded:
                    log.warning("cell %s degraded: %d failed fits", _cell_key(cell), row["n_failed"])
                degraded_any |= degraded
                rows.append(row)
        write_summary_csv(rows, out / "summary.csv")
        _write_timings(timings, out / "timings.csv")
        render_report(out)
    except OSError as exc:
        log.error("IO error: %s", exc)
        return EXIT_IO
    finally:
        if pool is not None:
            pool.shutdown()
    return EXIT_DEGRADED if degraded_any else EXIT_OK


def _write_timings(timings, path: Path) -> None:
    """Wall-clock per fit; kept apart so the other outputs stay reproducible."""
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["cell", "replicate", "wall_seconds", "seconds_to_ess1000"])
        for key, q, wall, t1000 in timings:
            w.writerow([key, q, f"{wall:.6g}", f"{t1000:.6g}"])


# --------------------------------------------------------------------------
# report


def _read_summary(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for c in SUMMARY_COLUMNS:
            if c not in ("model", "prior"):
                r[c] = float(r[c])
    return rows


def render_report(records_dir) -> list[Path]:
    """Group cells of each (DGM, N) into best/worse and write report files.

    Reads ``summary.csv`` from ``records_dir`` and writes ``report.txt`` and
    ``report.csv``.  Returns the written paths.
    """
    d = Path(records_dir)
    path = d / "summary.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    rows = [r for r in _read_summary(path) if r["n_sim"] >= 2 and math.isfinite(r["rmse_se"])]
    if not rows:
        raise ValueError("summary has no usable rows")
    lines = [f"Grouping rule: {GROUPING_RULE}", ""]
    table = []
    keys = sorted({(int(r["dgm"]), int(r["N"])) for r in rows})
    for dgm, n in keys:
        sub = [r for r in rows if int(r["dgm"]) == dgm and int(r["N"]) == n]
        tot = []
        for r in sub:
            mcse_sp = r["rmse_sp"] / math.sqrt(2.0 * r["n_sim"])
            tot.append((r["rmse_se"] + r["rmse_sp"], math.hypot(r["mcse_rmse_se"], mcse_sp)))
        best, _ = equivalence_groups(tot)
        order = sorted(range(len(sub)), key=lambda i: (tot[i][0], sub[i]["model"], sub[i]["prior"]))
        lines.append(f"DGM {dgm}, N = {n}")
        lines.append(f"  {'group':<6} {'model':<5} {'prior':<22} {'n_sim':>6} {'rmse_tot':>9} {'mcse':>8} "
                     f"{'rmse_se':>8} {'rmse_sp':>8} {'cvg_se':>7} {'cvg_sp':>7}")
        for i in order:
            r = sub[i]
            grp = "best" if i in best else "worse"
            lines.append(
                f"  {grp:<6} {r['model']:<5} {r['prior']:<22} {int(r['n_sim']):>6} {tot[i][0]:>9.4g} "
                f"{tot[i][1]:>8.3g} {r['rmse_se']:>8.4g} {r['rmse_sp']:>8.4g} {r['cvg_se']:>7.4g} {r['cvg_sp']:>7.4g}"
            )
            table.append([dgm, n, r["model"], r["prior"], int(r["n_sim"]),
                          f"{tot[i][0]:.6g}", f"{tot[i][1]:.6g}", grp])
        lines.append("")
    txt = d / "report.txt"
    txt.write_text("\n".join(lines))
    rc = d / "report.csv"
    with open(rc, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dgm", "N", "model", "prior", "n_sim", "rmse_total", "mcse_total", "group"])
        w.writerows(table)
    return [txt, rc]
