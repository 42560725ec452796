"""Command line interface: ``lcmvp simulate|fit|study|report``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dgm import dgm_spec, read_dataset_csv, simulate_dataset, write_dataset_csv
from .priors import builtin_prior_set
from .runner import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    ConfigError,
    StudyConfig,
    fit_dataset,
    render_report,
    run_study,
)
from .sampler import DivergenceError, HmcConfig, NonFiniteInitError, summarize, write_draws_csv


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcmvp", description="Latent class multivariate probit simulation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one dataset to CSV")
    s.add_argument("--dgm", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", required=True, help="output CSV path")
    s.add_argument("--with-truth", action="store_true", help="include true class column")

    f = sub.add_parser("fit", help="fit one dataset, write draws and a summary")
    f.add_argument("data", help="dataset CSV")
    f.add_argument("--dgm", type=int, default=1, help="DGM whose accuracy priors to use")
    f.add_argument("--model", choices=("ci", "lt", "mvp"), required=True)
    f.add_argument("--prior", required=True, help="prior set name, e.g. 'LKJ(10,1.5)'")
    f.add_argument("--seed", type=int, default=1)
    f.add_argument("--config", help="JSON file with HMC settings")
    f.add_argument("--out", required=True, help="output directory")

    st = sub.add_parser("study", help="run a simulation study")
    st.add_argument("--config", help="study config JSON")
    st.add_argument("--dgm", type=int, action="append")
    st.add_argument("--n", type=int, action="append")
    st.add_argument("--model", action="append")
    st.add_argument("--prior", action="append")
    st.add_argument("--seed", type=int)
    st.add_argument("--nsim-max", type=int)
    st.add_argument("--out")
    st.add_argument("--workers", type=int)

    r = sub.add_parser("report", help="render grouped tables from summary.csv")
    r.add_argument("--out", required=True, help="study output directory")
    return p


def _study_config(args) -> StudyConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config} is not valid JSON: {exc}") from exc
        if not isinstance(base, dict):
            raise ConfigError("config must be a JSON object")
    over = {
        "dgms": args.dgm, "sample_sizes": args.n, "models": args.model, "master_seed": args.seed,
        "nsim_max": args.nsim_max, "out_dir": args.out, "workers": args.workers,
    }
    base.update({k: v for k, v in over.items() if v is not None})
    if args.prior:
        models = base.get("models", StudyConfig().models)
        base["priors"] = {m: list(args.prior) for m in models}
    if "nsim_max" in base and "nsim_min" not in base:
        base["nsim_min"] = min(StudyConfig().nsim_min, base["nsim_max"])
    try:
        return StudyConfig.from_json(json.dumps(base))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_simulate(args) -> int:
    data = simulate_dataset(dgm_spec(args.dgm), args.n, np.random.default_rng(args.seed))
    write_dataset_csv(data, args.out, include_truth=args.with_truth)
    return EXIT_OK


def _cmd_fit(args) -> int:
    hmc = {}
    if args.config:
        try:
            hmc = json.loads(Path(args.config).read_text()).get("hmc", {})
            cfg = HmcConfig(**{**hmc, "seed": args.seed})
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            logging.error("bad config: %s", exc)
            return EXIT_CONFIG
    else:
        cfg = HmcConfig(seed=args.seed)
    try:
        prior = builtin_prior_set(args.dgm, args.model, args.prior)
    except ValueError as exc:
        logging.error("%s", exc)
        return EXIT_CONFIG
    data = read_dataset_csv(args.data)
    try:
        samples, diag = fit_dataset(args.model, data, prior, cfg)
    except (DivergenceError, NonFiniteInitError) as exc:
        logging.error("fit failed: %s", exc)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_draws_csv(samples, out / "draws.csv")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "median", "q2.5", "q97.5", "ess", "rhat"])
        for key in ("se", "sp"):
            med, lo, hi = summarize(samples, key)
            for t in range(len(med)):
                w.writerow([f"{key}[{t + 1}]", f"{med[t]:.6g}", f"{lo[t]:.6g}", f"{hi[t]:.6g}",
                            f"{diag.ess[key][t]:.6g}", f"{diag.rhat[key][t]:.6g}"])
        med, lo, hi = summarize(samples, "prev")
        w.writerow(["prev", f"{med:.6g}", f"{lo:.6g}", f"{hi:.6g}",
                    f"{diag.ess['prev']:.6g}", f"{diag.rhat['prev']:.6g}"])
    print(f"divergences {diag.n_divergent}, min ESS {diag.min_ess:.6g}, max R-hat {diag.max_rhat:.6g}, "
          f"wall {diag.wall_time:.3g} s")
    return EXIT_OK


def _cmd_study(args) -> int:
    try:
        cfg = _study_config(args)
    except ConfigError as exc:
        logging.error("%s", exc)
        return EXIT_CONFIG
    return run_study(cfg)


def _cmd_report(args) -> int:
    try:
        for path in render_report(args.out):
            print(path)
    except FileNotFoundError as exc:
        logging.error("%s", exc)
        return EXIT_IO
    except ValueError as exc:
        logging.error("%s", exc)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handler = {"simulate": _cmd_simulate, "fit": _cmd_fit, "study": _cmd_study, "report": _cmd_report}
    try:
        return handler[args.command](args)
    except OSError as exc:
        logging.error("IO error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
