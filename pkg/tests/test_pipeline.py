import json

import numpy as np
import pytest

from permfusion.domain import GridMap
from permfusion.optimize import DEConfig
from permfusion.pipeline import (RunConfig, ablation_study, config_hash, metrics_table,
                                 percentage_diff_map, prepare_wells, report, run_complete_fusion,
                                 run_pure_fusion, run_workflow, select_exclusions)
from permfusion.seismic import Architecture, TrainConfig
from permfusion.synthgen import SynthConfig, make_field

from conftest import make_wells

TINY = RunConfig(de=DEConfig(popsize=6, n_iter=3), arch=Architecture(conv_channels=(2, 2, 2), dense=(4,)),
                 training=TrainConfig(epochs=1, batch_size=16))


@pytest.fixture(scope="module")
def field():
    return make_field(SynthConfig(nx=16, ny=16, n_wells=12, corr_cells=4.0, cluster_spread=150.0))


@pytest.fixture(scope="module")
def wells(field):
    return prepare_wells(field.wells, TINY, field.fluids, field.relperm)


@pytest.fixture(scope="module")
def full_run(field, wells):
    return run_workflow(wells, field.grid, field.volume, TINY, prepared=True)


class TestPercentageDiff:
    def test_equal(self, small_grid, rng):
        a = GridMap(small_grid, rng.normal(size=small_grid.n))
        np.testing.assert_array_equal(percentage_diff_map(a, a).values, 0.0)

    def test_double(self, small_grid, rng):
        b = GridMap(small_grid, rng.normal(size=small_grid.n))
        a = b.with_values(b.values + np.log10(2.0))
        np.testing.assert_allclose(percentage_diff_map(a, b).values, 100.0, rtol=1e-12)

    def test_elementwise_oracle(self, small_grid, rng):
        a = GridMap(small_grid, rng.normal(size=small_grid.n))
        b = GridMap(small_grid, rng.normal(size=small_grid.n))
        got = percentage_diff_map(a, b).values
        lin_a, lin_b = a.linear(), b.linear()
        for i in range(small_grid.n):
            # exact given the linear values; scalar and vectorized pow may differ in the last ulp
            assert got[i] == 100.0 * (lin_a[i] - lin_b[i]) / lin_b[i]
            la, lb = 10.0 ** float(a.values[i]), 10.0 ** float(b.values[i])
            assert got[i] == pytest.approx(100.0 * (la - lb) / lb, rel=1e-13)

    def test_zero_denominator(self, small_grid):
        b = GridMap(small_grid, np.r_[-400.0, np.zeros(small_grid.n - 1)])
        with pytest.raises(ValueError, match=r"zero denominator at indices \[0\]"):
            percentage_diff_map(b.with_values(np.zeros(small_grid.n)), b)


class TestConfig:
    def test_hash_stable(self):
        assert config_hash(RunConfig()) == config_hash(RunConfig())
        assert config_hash(RunConfig()) != config_hash(RunConfig(seed=1))

    def test_round_trip(self):
        cfg = RunConfig(de=DEConfig(popsize=10), training=TrainConfig(epochs=3), percentile=0.6)
        back = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg and config_hash(back) == config_hash(cfg)

    def test_seeded(self):
        cfg = RunConfig(seed=7).seeded()
        assert cfg.de.seed == 7 and cfg.training.seed == 7


class TestStages:
    def test_single_well(self, small_grid):
        with pytest.raises(ValueError, match="constant synthetic tests"):
            run_pure_fusion(make_wells([(0, 0)], wl=[10.0]), small_grid, TINY)

    def test_pure_deterministic(self, field, wells):
        a = run_pure_fusion(wells, field.grid, TINY)
        b = run_pure_fusion(wells, field.grid, TINY)
        np.testing.assert_array_equal(a.perm_map.values, b.perm_map.values)
        assert a.fit.history == b.fit.history

    def test_full_run(self, full_run, field):
        assert full_run.complete.params.w_s >= 0.1
        assert full_run.seismic.seismic_map.grid.n == field.grid.n
        assert full_run.seismic.n_train > 0
        assert full_run.diff_map().kind == "difference"

    def test_persist_and_resume(self, tmp_path, field, wells, full_run):
        a = run_workflow(wells, field.grid, field.volume, TINY, out_dir=tmp_path, prepared=True)
        for stage in ("pure", "seismic", "complete"):
            assert (tmp_path / stage).is_dir()
        b = run_workflow(wells, field.grid, field.volume, TINY, out_dir=tmp_path, resume=True, prepared=True)
        np.testing.assert_array_equal(a.complete.perm_map.values, b.complete.perm_map.values)
        np.testing.assert_array_equal(a.seismic.seismic_map.values, b.seismic.seismic_map.values)
        # stage outputs are reproducible byte for byte
        c = run_workflow(wells, field.grid, field.volume, TINY, out_dir=tmp_path / "again", prepared=True)
        assert (tmp_path / "complete" / "perm_map.csv").read_bytes() == \
            (tmp_path / "again" / "complete" / "perm_map.csv").read_bytes()
        np.testing.assert_array_equal(a.complete.perm_map.values, c.complete.perm_map.values)

    def test_noise_seismic_is_harmless(self):
        f = make_field(SynthConfig())
        cfg = RunConfig()
        w = prepare_wells(f.wells, cfg, f.fluids, f.relperm)
        pure = run_pure_fusion(w, f.grid, cfg)
        v = pure.perm_map.values
        rng = np.random.default_rng(100)
        noise = GridMap(f.grid, rng.normal(v.mean(), v.std(), f.grid.n), "permeability")
        comp = run_complete_fusion(w, f.grid, pure, noise, cfg)
        lo, hi = cfg.bounds.limits["w_s"]
        assert comp.params.w_s <= lo + 0.25 * (hi - lo)
        assert comp.metrics["mse"] <= 1.1 * pure.metrics["mse"]
        assert comp.metrics["r2"] >= 0.9 * pure.metrics["r2"]


class TestAblation:
    def test_select_exclusions(self):
        wells = make_wells([(i, 0) for i in range(10)], wl=[10.0 ** i for i in range(10)])
        assert select_exclusions(wells) == ["W0", "W9"]

    def test_exclude_none(self, field, wells, full_run):
        res = ablation_study(wells, field.grid, field.volume, TINY, exclusion=[], baseline=full_run)
        np.testing.assert_array_equal(res.diff_map.values, 0.0)

    def test_too_few_wells(self, field, wells):
        keep = {w.id for w in wells[:2]}
        ids = [w.id for w in wells if w.id not in keep]
        with pytest.raises(ValueError, match="too few remaining wells"):
            ablation_study(wells, field.grid, None, TINY, exclusion=ids)

    def test_unknown_id(self, field, wells):
        with pytest.raises(ValueError, match="unknown well"):
            ablation_study(wells, field.grid, None, TINY, exclusion=["nope"])

    def test_pure_only_ablation(self, field, wells):
        res = ablation_study(wells, field.grid, None, TINY)
        assert res.excluded and res.table["mse"]["complete_all"] is None
        assert res.table["r2"]["pure_excluded"] is not None


class TestReport:
    def test_bundle(self, tmp_path, full_run):
        paths = report(full_run, tmp_path)
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == "metric,pure_all,pure_excluded,complete_all,complete_excluded"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["mse", "r2"]
        summary = (tmp_path / "summary.txt").read_text()
        assert f"config_hash: {config_hash(TINY)}" in summary and "seed: 0" in summary
        for key in ("pure_perm_map", "seismic_map", "complete_perm_map", "params", "config"):
            assert key in paths
        params = json.loads((tmp_path / "params.json").read_text())
        assert set(params) == {"pure", "complete"}

    def test_identical_runs_same_hash(self, tmp_path, full_run):
        report(full_run, tmp_path / "a")
        report(full_run, tmp_path / "b")
        assert (tmp_path / "a" / "summary.txt").read_text() == (tmp_path / "b" / "summary.txt").read_text()

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            report(None, tmp_path)

    def test_table_shape(self, full_run):
        t = metrics_table(full_run)
        assert set(t) == {"mse", "r2"}
        assert list(t["mse"]) == ["pure_all", "pure_excluded", "complete_all", "complete_excluded"]
