"""Synthetic generators and the experiment harness."""

import numpy as np
import pytest

from adasplit import ConfigError, Dataset, SubgroupPartition, ValidationError
from adasplit.simlab import (
    canonical_method,
    draw_covariates,
    generate,
    get_scenario,
    reproduce_table,
    run_method,
    run_replications,
    scenario_with_size,
    summarize_replications,
)
from adasplit.data import AdaSplitConfig
from adasplit import rng


class TestGenerate:
    def test_default_shape(self):
        ds, part, truth = generate("default", 0)
        assert ds.n == 500 and ds.d == 5
        assert [g.size for g in part.groups] == [100] * 5
        assert truth.nu2 == 1.0

    def test_reproducible(self):
        a, _, _ = generate("default", 42)
        b, _, _ = generate("default", 42)
        assert a.equals(b)
        c, _, _ = generate("default", 43)
        assert not a.equals(c)

    def test_null_scenario_ate_near_zero(self):
        ds, _, truth = generate("null", 1)
        assert np.all(truth.tau(ds.x) == 0.0)
        treated = ds.y[ds.z == 1.0].mean()
        control = ds.y[ds.z == 0.0].mean()
        assert abs(treated - control) < 4.0 / np.sqrt(ds.n) * np.std(ds.y)

    def test_expected_cate_is_half(self):
        gen = rng.stream(2, 1)
        x = draw_covariates(get_scenario("default"), 100000, gen)
        _, _, truth = generate("default", 2)
        assert abs(truth.tau(x).mean() - 0.5) < 0.01

    def test_larger_and_noisier_variants(self):
        ds, _, _ = generate("larger_n", 0)
        assert ds.n == 1000
        assert get_scenario("high_noise").nu2 == 2.0

    def test_toy_family(self):
        ds, part, truth = generate("toy_fig3", 5)
        assert ds.n == 200 and ds.d == 1 and part.k == 1
        assert np.all(ds.x >= 0.0) and np.all(ds.x <= 5.0)
        assert np.allclose(truth.tau(ds.x), ds.x[:, 0])

    def test_unknown_scenario(self):
        with pytest.raises(ValidationError, match="unknown scenario"):
            generate("mystery", 0)

    def test_scenario_with_size(self):
        scenario = scenario_with_size("default", 300)
        ds, part, _ = generate(scenario, 0)
        assert ds.n == 300 and part.k == 5


class TestRunMethod:
    def test_aliases(self):
        assert canonical_method("RT") == "rt"
        assert canonical_method("RT_RandomSplit") == "random_split"
        assert canonical_method("rt_adasplit") == "adasplit"
        with pytest.raises(ValidationError):
            canonical_method("bogus")

    def test_rt_has_no_folds(self):
        ds, part, _ = generate("default", 3)
        report = run_method("rt", ds, part, AdaSplitConfig(seed=3, mc_draws=100))
        assert report.folds is None and report.cate_coefficients is None
        assert len(report.pvalues) == part.k
        for p in report.pvalues:
            assert 1.0 / 101.0 <= p <= 1.0

    def test_random_split_holds_out_half(self):
        ds, part, _ = generate("default", 4)
        report = run_method("random_split", ds, part, AdaSplitConfig(seed=4, mc_draws=100))
        assert np.allclose(report.folds.proportions, 0.5)
        for k, g in enumerate(part.groups):
            assert set(report.folds.inference[k]) <= set(g)

    def test_constant_outcomes_give_p_one(self):
        n = 90
        gen = np.random.default_rng(5)
        ds = Dataset.from_arrays(gen.uniform(-0.5, 0.5, size=(n, 2)),
                                 np.zeros(n), (gen.random(n) < 0.5).astype(float))
        part = SubgroupPartition.from_labels(np.repeat(np.arange(3), n // 3))
        cfg = AdaSplitConfig(seed=5, mc_draws=50, n0=5, knn_k=5)
        for method in ("rt", "random_split", "adasplit"):
            report = run_method(method, ds, part, cfg)
            assert all(p == 1.0 for p in report.pvalues), method


class TestHarness:
    def test_replications_deterministic_and_parallel_equivalent(self):
        serial = run_replications("default", 4, 7, AdaSplitConfig(mc_draws=100, n0=5))
        threaded = run_replications("default", 4, 7, AdaSplitConfig(mc_draws=100, n0=5),
                                    threads=2)
        assert serial == threaded

    def test_summarize_cells(self):
        cfg = AdaSplitConfig(mc_draws=100, n0=5)
        results = run_replications("null", 4, 8, cfg)
        summary = summarize_replications("null", results, cfg)
        cells = {(c.method, c.cell) for c in summary.cells}
        for method in ("rt", "random_split", "adasplit"):
            assert (method, "fwer") in cells
            assert (method, "G1") in cells and (method, "G5") in cells
        assert len(summary.raw) == 12

    def test_reproduce_table_validation(self):
        with pytest.raises(ConfigError, match="reps >= 10"):
            reproduce_table(2, 5, 0)
        with pytest.raises(ConfigError, match="table"):
            reproduce_table(7, 20, 0)

    def test_reproduce_table_shapes(self):
        cfg = AdaSplitConfig(mc_draws=100, n0=5)
        t2 = reproduce_table(2, 10, 0, cfg)
        assert {(c.method, c.cell) for c in t2.cells} == {
            (m, f"G{g}") for m in ("rt", "random_split", "adasplit")
            for g in range(1, 6)
        }
        t3 = reproduce_table(3, 10, 0, cfg)
        assert all(c.cell == "fwer" for c in t3.cells) and len(t3.cells) == 3
        text = t3.render_text()
        assert "fwer" in text and "adasplit" in text

    def test_summary_csv_roundtrip(self, tmp_path):
        cfg = AdaSplitConfig(mc_draws=100, n0=5)
        results = run_replications("default", 2, 9, cfg, methods=("rt",))
        summary = summarize_replications("default", results, cfg)
        out = tmp_path / "cells.csv"
        raw = tmp_path / "raw.csv"
        summary.write_csv(out)
        summary.write_raw_csv(raw)
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# config:")
        assert lines[1].split(",")[:3] == ["scenario", "method", "cell"]
        raw_lines = raw.read_text().splitlines()
        assert len(raw_lines) == 2 + 2  # comment, header, two replications
