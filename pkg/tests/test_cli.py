import csv
import json
import re

import numpy as np
import pytest

from wsbart.artifact import ArtifactError, load_model, save_model
from wsbart.cli import main

FAST = ["--n-trees", "8", "--n-iter", "40", "--burn-in", "10", "--cv-iter", "30", "--cv-burn-in", "10"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--fn", "f1", "--n", "30", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def model(sim_dir):
    path = sim_dir / "model.wsb"
    assert main(["fit", str(sim_dir / "train.csv"), "--method", "wsb-st", "--bandwidth", "default",
                 "--out", str(path), *FAST]) == 0
    return path


class TestSimulate:
    def test_files(self, sim_dir):
        for name in ("train.csv", "test.csv", "truth.csv", "simulation.json"):
            assert (sim_dir / name).exists()
        assert len({r["subject_id"] for r in rows(sim_dir / "test.csv")}) == 9

    def test_same_seed_same_bytes(self, sim_dir, tmp_path):
        assert main(["simulate", "--fn", "f1", "--n", "30", "--seed", "7", "--out", str(tmp_path)]) == 0
        for name in ("train.csv", "test.csv", "truth.csv", "simulation.json"):
            assert (tmp_path / name).read_bytes() == (sim_dir / name).read_bytes()

    def test_lag_in_truth(self, tmp_path):
        assert main(["simulate", "--fn", "f5", "--lag", "0.26", "--n", "10", "--out", str(tmp_path)]) == 0
        meta = json.loads((tmp_path / "simulation.json").read_text())
        assert meta["lag"] == 0.26
        truth = rows(tmp_path / "truth.csv")
        for r in truth:
            f = 10 * np.sin(2 * np.pi * float(r["time"])) - 20 * float(r["x_driving"])
            assert float(r["f_true"]) == pytest.approx(f, abs=1e-9)

    def test_bad_function(self, tmp_path):
        assert main(["simulate", "--fn", "f9", "--out", str(tmp_path)]) == 2


class TestFit:
    def test_report(self, sim_dir, model):
        from wsbart.longitudinal import default_bandwidth, load_csv

        rep = json.loads((sim_dir / "model.wsb.json").read_text())
        assert rep["bandwidth"] == default_bandwidth(load_csv(sim_dir / "train.csv"))
        assert 0 < rep["inclusion_percent"] <= 100
        assert rep["mode"] == "soft" and rep["lag"] == 0.0
        assert rep["sigma"]["q05"] <= rep["sigma"]["q95"]

    def test_locf_b_hard(self, sim_dir, tmp_path):
        out = tmp_path / "m.wsb"
        assert main(["fit", str(sim_dir / "train.csv"), "--method", "locf-b", "--out", str(out), *FAST]) == 0
        assert json.loads((tmp_path / "m.wsb.json").read_text())["mode"] == "hard"

    def test_percent_bandwidth(self, sim_dir, tmp_path):
        out = tmp_path / "m.wsb"
        assert main(["fit", str(sim_dir / "train.csv"), "--bandwidth", "20%", "--out", str(out), *FAST]) == 0
        assert json.loads((tmp_path / "m.wsb.json").read_text())["inclusion_percent"] == pytest.approx(20, abs=0.5)

    def test_unknown_method(self, sim_dir, tmp_path):
        assert main(["fit", str(sim_dir / "train.csv"), "--method", "knn", "--out", str(tmp_path / "m")]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "m")]) == 3

    def test_config_file_and_override(self, sim_dir, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[wsbart]\nmethod = locf-b\nn-trees = 8\nn_iter = 40\nburn-in = 10\n")
        out = tmp_path / "a.wsb"
        assert main(["--config", str(cfg), "fit", str(sim_dir / "train.csv"), "--out", str(out)]) == 0
        rep = json.loads((tmp_path / "a.wsb.json").read_text())
        assert rep["method"] == "LOCF-B" and rep["n_trees"] == 8 and rep["n_draws"] == 30
        out = tmp_path / "b.wsb"
        assert main(["--config", str(cfg), "fit", str(sim_dir / "train.csv"), "--method", "li",
                     "--out", str(out)]) == 0
        assert json.loads((tmp_path / "b.wsb.json").read_text())["method"] == "LI"

    def test_bad_config_value(self, sim_dir, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("n-iter = many\n")
        assert main(["--config", str(cfg), "fit", str(sim_dir / "train.csv")]) == 2

    def test_inputs_untouched(self, sim_dir, model):
        before = (sim_dir / "train.csv").read_bytes()
        main(["fit", str(sim_dir / "train.csv"), "--out", str(sim_dir / "again.wsb"), *FAST])
        assert (sim_dir / "train.csv").read_bytes() == before


class TestPredict:
    def test_training_features(self, sim_dir, model, tmp_path):
        out = tmp_path / "pred.csv"
        query = tmp_path / "q.csv"
        test = rows(sim_dir / "test.csv")
        query.write_text("time,v1\n" + "".join(f"{r['time']},{r['v1']}\n" for r in test))
        assert main(["predict", str(model), str(query), "--out", str(out)]) == 0
        pred = rows(out)
        assert len(pred) == len(test)
        assert list(pred[0]) == ["v1", "time", "mean", "q05", "q50", "q95"]
        for r in pred:
            q = [float(r[k]) for k in ("q05", "q50", "q95")]
            assert all(np.isfinite(q)) and q[0] <= q[1] <= q[2]

    def test_round_trip_bytes(self, model, tmp_path):
        res, header = load_model(model)
        again = tmp_path / "copy.wsb"
        save_model(res, again, 1, header["transforms"])
        args = ["--sweep", "time", "--range", "0,1", "--at", "v1=0.5"]
        assert main(["predict", str(model), *args, "--out", str(tmp_path / "a.csv")]) == 0
        assert main(["predict", str(again), *args, "--out", str(tmp_path / "b.csv")]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert again.read_bytes() == model.read_bytes()

    def test_artifact_matches_in_memory(self, sim_dir, tmp_path):
        from wsbart.async_regression import RegressionSpec, fit_async
        from wsbart.longitudinal import load_csv
        from wsbart.sampler import SamplerConfig

        res = fit_async(load_csv(sim_dir / "train.csv"),
                        RegressionSpec("WSB", "DT", sampler=SamplerConfig(n_trees=5, n_iter=30, burn_in=10)))
        save_model(res, tmp_path / "m.wsb", 1)
        back, _ = load_model(tmp_path / "m.wsb")
        x, t = np.linspace(-1, 1, 7), np.linspace(0, 1, 7)
        a, b = res.predict(x, t), back.predict(x, t)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.quantiles, b.quantiles)

    def test_sweep_rows(self, model, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["predict", str(model), "--sweep", "time", "--range", "0,1", "--points", "100",
                     "--at", "v1=0.0", "--out", str(out)]) == 0
        pred = rows(out)
        assert len(pred) == 100
        assert {r["v1"] for r in pred} == {"0.0"}

    def test_schema_mismatch(self, model, tmp_path):
        query = tmp_path / "q.csv"
        query.write_text("time,v1,v2\n0.5,1.0,2.0\n")
        assert main(["predict", str(model), str(query)]) == 3

    def test_sweep_needs_at(self, model):
        assert main(["predict", str(model), "--sweep", "time", "--range", "0,1"]) == 2

    def test_corrupt_artifact(self, model, tmp_path):
        bad = tmp_path / "bad.wsb"
        bad.write_bytes(model.read_bytes()[:40])
        with pytest.raises(ArtifactError):
            load_model(bad)
        bad.write_bytes(b"NOTAMODEL" + model.read_bytes())
        assert main(["predict", str(bad), "--sweep", "time", "--range", "0,1", "--at", "v1=0"]) == 3


class TestSearch:
    def test_bandwidth_rows(self, sim_dir, tmp_path):
        out = tmp_path / "bw.csv"
        assert main(["search-bandwidth", str(sim_dir / "train.csv"), "--grid", "10,13.4,16.7,20",
                     "--folds", "3", "--pool-fraction", "20", "--out", str(out), *FAST]) == 0
        rep = rows(out)
        assert [r["row"] for r in rep] == ["grid"] * 4 + ["choice"]
        assert [float(r["percent"]) for r in rep[:4]] == pytest.approx([10, 13.4, 16.7, 20])
        assert rep[4]["bandwidth"] in {r["bandwidth"] for r in rep[:4]}

    def test_lag_rows(self, sim_dir, tmp_path, monkeypatch):
        import wsbart.async_regression as ar

        monkeypatch.setattr(ar, "_cv_predictions", lambda d, s, h, lag, pool, *a: pool.response + lag)
        out = tmp_path / "lag.csv"
        grid = "0,0.1,0.2,0.25,0.26,0.27,0.28,0.3"
        assert main(["search-lag", str(sim_dir / "train.csv"), "--grid", grid, "--out", str(out)]) == 0
        rep = rows(out)
        assert len(rep) == 9 and rep[-1]["row"] == "choice" and float(rep[-1]["lag"]) == 0.0

    def test_empty_grid_is_usage_error(self, sim_dir):
        assert main(["search-bandwidth", str(sim_dir / "train.csv"), "--grid", ""]) == 2
        assert main(["search-lag", str(sim_dir / "train.csv"), "--grid", ","]) == 2


class TestExperiment:
    def test_csv_and_svg(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WSBART_THREADS", "1")
        args = ["experiment", "--fn", "f1", "--n", "12", "--replicates", "3", "--methods", "wsb-st,locf-s",
                "--n-trees", "8", "--n-iter", "30", "--burn-in", "10", "--seed", "4", "--out"]
        assert main(args + [str(tmp_path / "a")]) == 0
        report = rows(tmp_path / "a" / "experiment_f1_n12.csv")
        assert len(report) == 6
        assert list(report[0]) == ["replicate", "method", "rmse", "h_chosen", "lag_chosen", "seed", "error"]
        svg = (tmp_path / "a" / "boxplot_f1_n12.svg").read_text()
        assert svg.startswith("<?xml") and 'version="1.1"' in svg
        for method in ("WSB-ST", "LOCF-S"):
            vals = np.array([float(r["rmse"]) for r in report if r["method"] == method])
            m = re.search(rf"<!-- stats group={method} n=\d+ q1=(\S+) median=(\S+) q3=(\S+)", svg)
            assert m, svg[:500]
            q = np.quantile(vals, [0.25, 0.5, 0.75], method="linear")
            np.testing.assert_allclose([float(v) for v in m.groups()], q, rtol=1e-12)
        assert main(args + [str(tmp_path / "b")]) == 0
        for name in ("experiment_f1_n12.csv", "boxplot_f1_n12.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_failure_exit_code(self, tmp_path):
        args = ["experiment", "--fn", "f1", "--n", "12", "--replicates", "1", "--methods", "wsb-st",
                "--bandwidth", "1e-12", "--n-trees", "8", "--n-iter", "30", "--burn-in", "10",
                "--out", str(tmp_path)]
        assert main(args) == 4
        assert rows(tmp_path / "experiment_f1_n12.csv")[0]["error"]

    def test_bad_threads(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WSBART_THREADS", "lots")
        assert main(["experiment", "--n", "12", "--replicates", "1", "--out", str(tmp_path)]) == 2


def test_no_command():
    assert main([]) == 2
