import json
import math

import pytest

from abqaoa_sat import harness
from abqaoa_sat.harness import (
    RESULT_COLUMNS,
    SUMMARY_COLUMNS,
    ConfigError,
    ExperimentConfig,
    aggregate,
    convergent_r,
    export_tables,
    generate_ensemble,
    levels_to_solution,
    r_convergence_study,
    read_table,
    relative_change,
    sweep,
)
from abqaoa_sat.sat import Formula
from abqaoa_sat.variational import OptimizerConfig

FAST = {"gradient": "exact", "samples": 2, "max_iter": 40}


def small_config(tmp_path, **kw):
    d = dict(
        seed=3,
        n_list=[5],
        alphas=["0.6", "2"],
        levels=[1, 2],
        algorithms=["qaoa", "ab_qaoa", "ofab"],
        instances=2,
        optimizer=FAST,
        output_dir=str(tmp_path),
    )
    d.update(kw)
    return ExperimentConfig.from_dict(d)


class TestConfig:
    def test_seed_mandatory(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"n_list": [5]})

    @pytest.mark.parametrize(
        "kw",
        [
            {"algorithms": ["vqe"]},
            {"init": "random"},
            {"problem": "count"},
            {"instances": 0},
            {"alphas": ["x"]},
            {"optimizer": {"samples": 0}},
            {"bogus": 1},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"seed": 1, **kw})

    def test_load_with_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 1, "n_list": [6], "levels": [4, 2]}))
        cfg = ExperimentConfig.load(path, instances=7, seed=None)
        assert cfg.instances == 7 and cfg.levels == [2, 4] and cfg.seed == 1

    def test_hash_ignores_threads(self, tmp_path):
        a = small_config(tmp_path, threads=1)
        b = small_config(tmp_path / "x", threads=4)
        assert a.hash() == b.hash()
        assert a.hash() != small_config(tmp_path, seed=4).hash()


class TestSeeding:
    def test_ensemble_reproducible(self):
        assert generate_ensemble(1, 8, "0.6", 3) == generate_ensemble(1, 8, 0.6, 3)

    def test_prefix_stable(self):
        # instance i does not depend on how many instances are requested
        assert generate_ensemble(1, 8, 1, 5)[:2] == generate_ensemble(1, 8, 1, 2)

    def test_streams_differ(self):
        a = harness.run_rng(1, "qaoa", 8, 1, 4, 0).random()
        assert a == harness.run_rng(1, "ab_qaoa", 8, 1, 4, 0).random()
        assert a != harness.run_rng(1, "qaoa", 8, 1, 5, 0).random()
        assert a != harness.run_rng(1, "ofab", 8, 1, 4, 0).random()


class TestSweep:
    def test_rows_and_files(self, tmp_path):
        cfg = small_config(tmp_path)
        res = sweep(cfg)
        assert len(res.rows) == 3 * 2 * 2 * 2
        assert res.failed == 0
        back = read_table(tmp_path / "results.csv", RESULT_COLUMNS)
        assert [r["instance_id"] for r in back] == [r["instance_id"] for r in res.rows]
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seed"] == 3 and manifest["config_hash"] == cfg.hash()
        cell = res.cell("ab_qaoa", 5, "2", 2)
        assert cell["count"] == 2

    def test_byte_identical_rerun(self, tmp_path):
        sweep(small_config(tmp_path / "a"))
        sweep(small_config(tmp_path / "b", threads=2))
        for name in ("results.csv", "summary.csv", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_shared_ensemble(self, tmp_path):
        res = sweep(small_config(tmp_path, alphas=["2"], levels=[1]), write=False)
        by_algo = {}
        for r in res.rows:
            by_algo.setdefault(r["algo"], []).append((r["instance_id"], r["ground_energy"]))
        assert by_algo["qaoa"] == by_algo["ab_qaoa"] == by_algo["ofab"]

    def test_sampled_energy(self, tmp_path):
        res = sweep(small_config(tmp_path, algorithms=["ab_qaoa"], levels=[2], shots=20000), write=False)
        for r in res.rows:
            assert r["sampled_energy"] == pytest.approx(r["energy"], abs=0.1)


class TestAggregate:
    def _row(self, **kw):
        base = dict(
            algo="qaoa", n=5, alpha="1", p=1, status="ok", residual_energy=0.5, infidelity=0.2, n_con_mean=10.0,
            gate_proxy=10.0, sat=1, verdict=1,
        )
        base.update(kw)
        return base

    def test_single_row(self):
        (s,) = aggregate([self._row()])
        assert s["residual_energy_mean"] == 0.5 and s["residual_energy_stderr"] == 0
        assert s["p_succ"] == 1 and s["p_sat"] == 1 and s["count"] == 1

    def test_failed_rows_flagged(self):
        (s,) = aggregate([self._row(), self._row(status="failed: x", residual_energy=math.nan)])
        assert s["failed"] == 1 and s["count"] == 1 and s["residual_energy_mean"] == 0.5

    def test_all_failed_cell(self):
        (s,) = aggregate([self._row(status="failed: x")])
        assert s["count"] == 0 and math.isnan(s["p_succ"])

    def test_stderr(self):
        rows = [self._row(residual_energy=v) for v in (1.0, 2.0, 3.0)]
        (s,) = aggregate(rows)
        assert s["residual_energy_stderr"] == pytest.approx(1 / math.sqrt(3))


class TestExport:
    def test_header_only(self, tmp_path):
        path = export_tables([], SUMMARY_COLUMNS, tmp_path / "e.csv")
        assert path.read_text() == ",".join(c for c, _ in SUMMARY_COLUMNS) + "\n"
        assert read_table(path, SUMMARY_COLUMNS) == []

    def test_round_trip(self, tmp_path):
        cols = (("a", str), ("b", int), ("c", float))
        rows = [{"a": "x", "b": 3, "c": 0.1}, {"a": "y", "b": -1, "c": 1.5e-7}]
        back = read_table(export_tables(rows, cols, tmp_path / "t.csv"), cols)
        assert back == rows

    def test_format(self):
        assert harness.format_value(1 / 3) == "0.333333333333"
        assert harness.format_value(True) == "1"
        assert harness.format_value(float("nan")) == "nan"

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("x,y\n")
        with pytest.raises(ValueError):
            read_table(path, (("a", str),))


class TestLevels:
    def test_solved_at_first_level(self):
        f = Formula(3, ((0, 1, 2),))
        out = levels_to_solution(f, "ab_qaoa", OptimizerConfig(**FAST), "decision", schedule=[1, 2])
        assert out.level == 1 and out.solved

    def test_saturation(self):
        f = generate_instance_hard()
        out = levels_to_solution(f, "qaoa", OptimizerConfig(**FAST), "max", schedule=[1])
        assert out.level == harness.SATURATION_LEVEL and not out.solved

    def test_default_schedules(self):
        assert harness.default_level_schedule("qaoa") == (1, 2, 3, 4, 5, 6, 7, 8, 16, 24, 32, 40, 48, 56, 64)
        assert harness.default_level_schedule("ab_qaoa") == (1, 2, 3, 4, 5, 6, 7, 8, 16, 24)

    def test_ofab_levels(self):
        f = Formula(3, ((0, 1, 2),))
        out = levels_to_solution(f, "ofab", OptimizerConfig(**FAST), "max", schedule=[1, 2, 4])
        assert out.level in (1, 2, 4, 64)


def generate_instance_hard():
    return generate_ensemble(0, 8, 3, 1)[0]


class TestRConvergence:
    def test_constant(self):
        assert convergent_r([1, 5, 10], [2.0, 2.0, 2.0]) == 1

    def test_tail(self):
        assert convergent_r([1, 5, 10, 20], [1.0, 0.5, 0.499, 0.4985]) == 5

    def test_not_converged(self):
        assert convergent_r([1, 5, 10], [1.0, 1.0, 0.5]) is None

    def test_relative_change(self):
        assert relative_change(0, 0) == 0
        assert relative_change(0, 1) == math.inf
        assert relative_change(2, 1) == 0.5

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            convergent_r([5, 1], [1, 1])

    def test_monotone_study(self):
        fs = generate_ensemble(0, 5, 2, 2)
        st = r_convergence_study(fs, [1, 2, 3], OptimizerConfig(**{**FAST, "samples": 3}), "ab_qaoa", 2)
        assert all(b <= a + 1e-12 for a, b in zip(st.residual_energy, st.residual_energy[1:]))
        assert set(st.convergent) == {"residual_energy", "infidelity"}


class TestPresets:
    def test_load_preset(self, tmp_path):
        cfg = ExperimentConfig.load(preset="levels12", seed=1)
        assert cfg.instances == 50 and cfg.n_list == [12]
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"instances": 5}))
        assert ExperimentConfig.load(path, "success", seed=1).instances == 5
        assert ExperimentConfig.load(path, "success", seed=1, instances=9).instances == 9

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.load(preset="nope", seed=1)

    @pytest.mark.parametrize("name", sorted(harness.PRESETS))
    def test_presets_valid(self, name):
        ExperimentConfig.load(preset=name, seed=0)


class TestLevelsAggregate:
    def test_aggregate(self):
        rows = [
            {"algo": "qaoa", "n": 6, "alpha": "2", "level": 64, "solved": 0},
            {"algo": "qaoa", "n": 6, "alpha": "2", "level": 16, "solved": 1},
        ]
        (s,) = harness.aggregate_levels(rows)
        assert s["level_mean"] == 40 and s["solved"] == 1 and s["count"] == 2

    def test_monotone_record(self):
        # success at a level means the recorded level is not above it
        f = Formula(3, ((0, 1, 2),))
        out = levels_to_solution(f, "ab_qaoa", OptimizerConfig(**FAST), "max", schedule=[1, 2, 3])
        assert out.level <= max(p for p, _, inf in out.tried if inf <= 0.1)


class TestGateCost:
    def test_ratio_and_flags(self, tmp_path):
        res = sweep(small_config(tmp_path, alphas=["2"], levels=[2], algorithms=["qaoa", "ab_qaoa"]))
        q = res.cell("qaoa", 5, 2, 2)["gate_proxy_mean"]
        a = res.cell("ab_qaoa", 5, 2, 2)["gate_proxy_mean"]
        assert res.gate_cost_ratio(5, 2, 2) == pytest.approx(q / a)
        assert json.loads((tmp_path / "manifest.json").read_text())["failed_cells"] == []
