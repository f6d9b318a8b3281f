"""Command-line interface: exit codes, file contracts, determinism."""

import csv
import json

import numpy as np
import pytest

from adasplit import read_dataset_csv, write_dataset_csv
from adasplit.cli import main
from adasplit.simlab import generate


@pytest.fixture()
def trial_csv(tmp_path):
    ds, part, _ = generate("default", 7)
    path = tmp_path / "trial.csv"
    write_dataset_csv(path, ds, subgroup_labels=part.labels())
    return path


def run_cli(*args):
    return main([str(a) for a in args])


class TestAnalyze:
    def test_adasplit_report(self, trial_csv, tmp_path):
        out = tmp_path / "report.json"
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"mc_draws": 200, "seed": 3, "n0": 10}))
        code = run_cli("analyze", "--data", trial_csv, "--config", config,
                       "--method", "adasplit", "--out", out)
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["schema"] == 1
        assert len(payload["pvalues"]) == 5
        for p in payload["pvalues"]:
            assert 1.0 / 201.0 <= p <= 1.0
        assert payload["config"]["mc_draws"] == 200
        assert payload["folds"] is not None
        assert len(payload["cate_coefficients"]) == 6

    def test_rt_has_no_folds(self, trial_csv, tmp_path):
        out = tmp_path / "report.json"
        code = run_cli("analyze", "--data", trial_csv, "--method", "rt",
                       "--out", out)
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["folds"] is None and payload["cate_coefficients"] is None
        # default config: 1000 reference draws bound the p-values
        for p in payload["pvalues"]:
            assert 1.0 / 1001.0 <= p <= 1.0
        assert payload["config"]["mc_draws"] == 1000

    def test_quantile_cuts(self, tmp_path):
        ds, _, _ = generate("default", 8)
        path = tmp_path / "plain.csv"
        write_dataset_csv(path, ds)
        out = tmp_path / "r.json"
        code = run_cli("analyze", "--data", path, "--method", "rt",
                       "--quantile-cuts", "0.2,0.4,0.6,0.8", "--on", "x1",
                       "--out", out)
        assert code == 0
        assert len(json.loads(out.read_text())["pvalues"]) == 5

    def test_missing_z_column_exit_2(self, tmp_path, capsys):
        path = tmp_path / "broken.csv"
        path.write_text("x1,y\n0.1,2.0\n")
        assert run_cli("analyze", "--data", path, "--method", "rt") == 2
        assert "z" in capsys.readouterr().err

    def test_non_numeric_cell_names_row_and_column(self, tmp_path, capsys):
        path = tmp_path / "broken.csv"
        path.write_text("x1,y,z,subgroup\n0.1,oops,1,0\n0.3,1.0,0,0\n")
        assert run_cli("analyze", "--data", path, "--method", "rt") == 2
        err = capsys.readouterr().err
        assert "row 1" in err and "column y" in err

    def test_bad_config_exit_3(self, trial_csv, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"rho": 2.0}))
        assert run_cli("analyze", "--data", trial_csv, "--config", config) == 3

    def test_no_subgroups_exit_2(self, tmp_path):
        ds, _, _ = generate("default", 9)
        path = tmp_path / "plain.csv"
        write_dataset_csv(path, ds)
        assert run_cli("analyze", "--data", path, "--method", "rt") == 2

    def test_trace_csv(self, trial_csv, tmp_path):
        trace = tmp_path / "trace.csv"
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"mc_draws": 100, "n0": 10}))
        code = run_cli("analyze", "--data", trial_csv, "--config", config,
                       "--method", "adasplit", "--out", tmp_path / "r.json",
                       "--trace", trace)
        assert code == 0
        with open(trace, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:3] == ["t", "unit", "subgroup"]
        assert len(rows) > 1


class TestSimulate:
    def test_rows_and_determinism(self, tmp_path):
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"mc_draws": 100, "n0": 5}))
        args = ["simulate", "--scenario", "default", "--reps", "2",
                "--seed", "11", "--config", config]
        assert run_cli(*args, "--out", out1) == 0
        assert run_cli(*args, "--out", out2) == 0
        assert out1.read_bytes() == out2.read_bytes()
        with open(out1, newline="") as fh:
            rows = [r for r in csv.reader(fh) if not r[0].startswith("#")]
        header, body = rows[0], rows[1:]
        assert len(body) == 6  # 2 replications x 3 methods
        per_method = {}
        for row in body:
            per_method.setdefault(row[header.index("method")], []).append(row)
        assert all(len(v) == 2 for v in per_method.values())
        assert (tmp_path / "a_summary.csv").exists()

    def test_unknown_scenario_exit_2(self, tmp_path):
        assert run_cli("simulate", "--scenario", "nope", "--reps", "2",
                       "--out", tmp_path / "x.csv") == 2

    def test_null_aggregate_fwer_bounded(self, tmp_path):
        out = tmp_path / "null.csv"
        assert run_cli("simulate", "--scenario", "null", "--reps", "40",
                       "--seed", "5", "--out", out) == 0
        with open(out, newline="") as fh:
            rows = [r for r in csv.reader(fh) if not r[0].startswith("#")]
        header, body = rows[0], rows[1:]
        col = header.index("any_rejected")
        by_method = {}
        for row in body:
            by_method.setdefault(row[header.index("method")], []).append(float(row[col]))
        for method, vals in by_method.items():
            assert np.mean(vals) <= 0.28, method


class TestReproduce:
    def test_reps_validation_exit_3(self, tmp_path):
        assert run_cli("reproduce", "--table", "4", "--reps", "0",
                       "--out", tmp_path) == 3

    def test_bad_table_exit_3(self, tmp_path):
        assert run_cli("reproduce", "--table", "9", "--reps", "10",
                       "--out", tmp_path) == 3

    def test_table2_grid(self, tmp_path, capsys):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"mc_draws": 100, "n0": 5}))
        code = run_cli("reproduce", "--table", "2", "--reps", "10",
                       "--seed", "3", "--config", config, "--out", tmp_path)
        assert code == 0
        with open(tmp_path / "table2.csv", newline="") as fh:
            rows = [r for r in csv.reader(fh) if not r[0].startswith("#")]
        body = rows[1:]
        assert len(body) == 15  # 5 subgroups x 3 methods
        assert (tmp_path / "table2.txt").exists()
        assert (tmp_path / "table2_raw.csv").exists()

    def test_table4_grid(self, tmp_path, capsys):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"mc_draws": 100, "n0": 5}))
        code = run_cli("reproduce", "--table", "4", "--reps", "10",
                       "--seed", "3", "--config", config, "--out", tmp_path)
        assert code == 0
        with open(tmp_path / "table4.csv", newline="") as fh:
            rows = [r for r in csv.reader(fh) if not r[0].startswith("#")]
        body = rows[1:]
        assert len(body) == 9  # 3 methods x 3 scenarios
        scenarios = {row[0] for row in body}
        assert scenarios == {"default", "larger_n", "high_noise"}


class TestThreads:
    def test_env_variable_bad_value_exit_3(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ADASPLIT_THREADS", "lots")
        assert run_cli("simulate", "--scenario", "default", "--reps", "1",
                       "--out", tmp_path / "x.csv") == 3

    def test_threads_flag(self, tmp_path):
        out = tmp_path / "t.csv"
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"mc_draws": 100, "n0": 5}))
        assert run_cli("--threads", "2", "simulate", "--scenario", "default",
                       "--reps", "2", "--config", config, "--out", out) == 0
        assert out.exists()


class TestLargeTrialShape:
    def test_csv_roundtrip_sprint_shape(self, tmp_path):
        # ingestion round-trip on a synthetic trial of the same shape as the
        # real blood-pressure study: 8,746 rows, 18 covariates, 8 subgroups
        gen = np.random.default_rng(12)
        n, d = 8746, 18
        x = gen.normal(size=(n, d))
        z = (gen.random(n) < 0.5).astype(float)
        y = (gen.random(n) < 0.6).astype(float)
        labels = gen.integers(0, 8, size=n)
        from adasplit import Dataset

        ds = Dataset.from_arrays(x, y, z)
        path = tmp_path / "big.csv"
        write_dataset_csv(path, ds, subgroup_labels=labels)
        back, lab = read_dataset_csv(path)
        assert back.n == n and back.d == d
        assert np.array_equal(lab, labels)
        assert back.equals(ds)

    def test_analyze_rt_on_sprint_shape(self, tmp_path):
        gen = np.random.default_rng(13)
        n, d = 8746, 18
        x = gen.normal(size=(n, d))
        z = (gen.random(n) < 0.5).astype(float)
        y = (gen.random(n) < 0.6).astype(float)
        labels = gen.integers(0, 8, size=n)
        from adasplit import Dataset

        path = tmp_path / "big.csv"
        write_dataset_csv(path, Dataset.from_arrays(x, y, z), subgroup_labels=labels)
        out = tmp_path / "r.json"
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"mc_draws": 200}))
        code = run_cli("analyze", "--data", path, "--method", "rt",
                       "--config", config, "--out", out)
        assert code == 0
        assert len(json.loads(out.read_text())["pvalues"]) == 8
