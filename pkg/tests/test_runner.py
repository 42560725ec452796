import csv
import json

import numpy as np
import pytest

from lcmvp.cli import main
from lcmvp.runner import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    ConfigError,
    StudyConfig,
    render_report,
    replicate_seed,
    run_study,
)

FAST_HMC = {"n_chains": 2, "n_warmup": 100, "n_samples": 100}


def _summary(path, rows):
    cols = ["dgm", "model", "prior", "N", "n_sim", "rmse_se", "mcse_rmse_se", "rmse_sp",
            "bias_se", "bias_sp", "cvg_se", "cvg_sp", "width_se", "width_sp"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r.get(c, 0) for c in cols])


class TestStudyConfig:
    def test_defaults_valid(self):
        cfg = StudyConfig()
        assert cfg.cells()[0][:3] == (1, 300, "ci")

    def test_json_round_trip(self):
        cfg = StudyConfig(dgms=[2, 4], models=["lt"], hmc=FAST_HMC, master_seed=9)
        assert StudyConfig.from_json(cfg.to_json()) == cfg

    @pytest.mark.parametrize("text", [
        "not json", "[1, 2]", '{"dgms": [7]}', '{"models": ["logit"]}', '{"nsim_min": 50, "nsim_max": 10}',
        '{"hmc": {"target_accept": 2}}', '{"colour": 1}', '{"priors": {"mvp": ["LKJ(3,3)"]}}',
        '{"custom_priors": [{"name": "x"}]}', '{"workers": 0}',
    ])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            StudyConfig.from_json(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            StudyConfig.load(tmp_path / "nope.json")

    def test_cells_enumerate_builtin_sets(self):
        cfg = StudyConfig(dgms=[1], sample_sizes=[300], models=["ci", "mvp", "lt"])
        assert len(cfg.cells()) == 1 + 6 + 3

    def test_custom_prior(self):
        from lcmvp.priors import builtin_prior_set

        d = builtin_prior_set(1, "mvp", "mixedLKJ(10,1.5)").to_dict()
        d["name"] = "myMixed"
        cfg = StudyConfig(models=["mvp"], priors={"mvp": ["myMixed"]}, custom_priors=[d])
        assert [c[3] for c in cfg.cells()] == ["myMixed", "myMixed"]


class TestSeeds:
    def test_distinct(self):
        cells = [(d, n, "mvp", p) for d in (1, 2) for n in (300, 3000) for p in ("LKJ(10,1.5)", "LKJ(24,4)")]
        seeds = {replicate_seed(1, c, r) for c in cells for r in range(200)}
        assert len(seeds) == len(cells) * 200

    def test_stable(self):
        c = (1, 300, "ci", "CI")
        assert replicate_seed(5, c, 3) == replicate_seed(5, c, 3)
        assert replicate_seed(5, c, 3) != replicate_seed(6, c, 3)


class TestReport:
    def test_single_cell(self, tmp_path):
        _summary(tmp_path / "summary.csv", [dict(dgm=1, model="ci", prior="CI", N=300, n_sim=50,
                                                  rmse_se=7.0, mcse_rmse_se=0.7, rmse_sp=2.0)])
        render_report(tmp_path)
        rows = list(csv.DictReader(open(tmp_path / "report.csv")))
        assert len(rows) == 1 and rows[0]["group"] == "best"
        assert "Grouping rule" in (tmp_path / "report.txt").read_text()

    def test_two_groups(self, tmp_path):
        _summary(tmp_path / "summary.csv", [
            dict(dgm=1, model="ci", prior="CI", N=300, n_sim=400, rmse_se=9.0, mcse_rmse_se=0.2, rmse_sp=3.0),
            dict(dgm=1, model="mvp", prior="LKJ(10,1.5)", N=300, n_sim=400, rmse_se=6.0, mcse_rmse_se=0.2,
                 rmse_sp=2.0),
            dict(dgm=1, model="mvp", prior="LKJ(24,4)", N=300, n_sim=400, rmse_se=6.2, mcse_rmse_se=0.2,
                 rmse_sp=2.0),
        ])
        render_report(tmp_path)
        groups = {r["prior"]: r["group"] for r in csv.DictReader(open(tmp_path / "report.csv"))}
        assert groups == {"CI": "worse", "LKJ(10,1.5)": "best", "LKJ(24,4)": "best"}

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            render_report(tmp_path)


class TestRunStudy:
    def test_small_study(self, tmp_path):
        cfg = StudyConfig(dgms=[1], sample_sizes=[150], models=["ci"], nsim_min=3, nsim_max=3,
                          hmc=FAST_HMC, out_dir=str(tmp_path), master_seed=2)
        assert run_study(cfg) == EXIT_OK
        for name in ("records.csv", "summary.csv", "timings.csv", "config.json", "report.txt", "report.csv"):
            assert (tmp_path / name).exists()
        rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
        assert len(rows) == 1 and rows[0]["n_sim"] == "3"
        assert 0 < float(rows[0]["rmse_se"]) < 30
        assert json.loads((tmp_path / "config.json").read_text())["master_seed"] == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        cfg = StudyConfig(models=["ci"], out_dir=str(blocker / "sub"), hmc=FAST_HMC)
        assert run_study(cfg) == EXIT_IO

    def test_bad_thread_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LCMVP_THREADS", "many")
        cfg = StudyConfig(models=["ci"], out_dir=str(tmp_path), hmc=FAST_HMC)
        assert run_study(cfg) == EXIT_CONFIG


class TestCli:
    def test_simulate_and_fit(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        assert main(["simulate", "--dgm", "2", "--n", "200", "--seed", "3", "--out", str(data),
                     "--with-truth"]) == EXIT_OK
        head = data.read_text().splitlines()[0]
        assert head == "subject,t1,t2,t3,t4,t5,d"
        conf = tmp_path / "hmc.json"
        conf.write_text(json.dumps({"hmc": FAST_HMC}))
        out = tmp_path / "fit"
        assert main(["fit", str(data), "--model", "ci", "--prior", "CI", "--config", str(conf),
                     "--out", str(out)]) == EXIT_OK
        summ = list(csv.DictReader(open(out / "summary.csv")))
        assert [r["quantity"] for r in summ][:2] == ["se[1]", "se[2]"] and summ[-1]["quantity"] == "prev"
        assert (out / "draws.csv").exists()
        assert "divergences" in capsys.readouterr().out

    def test_fit_unknown_prior(self, tmp_path):
        data = tmp_path / "d.csv"
        main(["simulate", "--dgm", "1", "--n", "50", "--out", str(data)])
        assert main(["fit", str(data), "--model", "mvp", "--prior", "LKJ(1,1)", "--out", str(tmp_path)]) \
            == EXIT_CONFIG

    def test_study_bad_config(self, tmp_path):
        bad = tmp_path / "c.json"
        bad.write_text('{"dgms": [9]}')
        assert main(["study", "--config", str(bad)]) == EXIT_CONFIG
        assert main(["study", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG

    def test_study_flags(self, tmp_path):
        rc = main(["study", "--dgm", "1", "--n", "120", "--model", "ci", "--nsim-max", "2", "--seed", "4",
                   "--out", str(tmp_path / "s")])
        # default hmc settings; only check the run completed and wrote outputs
        assert rc == EXIT_OK
        assert (tmp_path / "s" / "summary.csv").exists()
        assert main(["report", "--out", str(tmp_path / "s")]) == EXIT_OK

    def test_report_missing(self, tmp_path):
        assert main(["report", "--out", str(tmp_path)]) == EXIT_IO

    def test_missing_dataset(self, tmp_path):
        assert main(["fit", str(tmp_path / "none.csv"), "--model", "ci", "--prior", "CI",
                     "--out", str(tmp_path)]) == EXIT_IO


def test_reproducible_records(tmp_path):
    kw = dict(dgms=[1], sample_sizes=[100], models=["ci"], nsim_min=2, nsim_max=2, hmc=FAST_HMC, master_seed=3)
    assert run_study(StudyConfig(out_dir=str(tmp_path / "a"), **kw)) == EXIT_OK
    assert run_study(StudyConfig(out_dir=str(tmp_path / "b"), **kw)) == EXIT_OK
    a = (tmp_path / "a" / "records.csv").read_bytes()
    assert a == (tmp_path / "b" / "records.csv").read_bytes()
    assert np.isfinite(float(list(csv.DictReader(open(tmp_path / "a" / "summary.csv")))[0]["rmse_se"]))
