"""Experiment orchestration, artifact emission, and CLI behavior."""

import json
import os

import numpy as np
import pytest

from emlab import cli
from emlab import experiments as ex

BOX12 = {"shape": "box", "h": 1 / 12}
EXT4 = {"shape": "exterior_of_ball", "h": 0.25,
        "params": {"radius": 1.0, "r_out": 4.0}}


@pytest.fixture(scope="module")
def growth_run(tmp_path_factory):
    rep = ex.run_experiment({"experiment": "growth_suite"})
    out = str(tmp_path_factory.mktemp("growth"))
    ex.emit_report(rep, out)
    return rep, out


class TestConfig:
    def test_unknown_experiment_rejected(self):
        with pytest.raises(ex.UnknownExperimentError):
            ex.ExperimentConfig("bogus")
        with pytest.raises(ex.UnknownExperimentError):
            ex.run_experiment({"experiment": "bogus"})

    def test_missing_experiment_rejected(self):
        with pytest.raises(ex.UnknownExperimentError):
            ex.ExperimentConfig.from_dict({"domain": BOX12})

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            ex.ExperimentConfig.from_dict(
                {"experiment": "growth_suite", "grid": [1, 2]})

    def test_tolerance_defaults_merge(self):
        cfg = ex.ExperimentConfig("wellposed", tolerances={"cdc_min": 0.2})
        assert cfg.tolerances["cdc_min"] == 0.2
        assert cfg.tolerances["trace_tol"] == 1e-8

    def test_echo_round_trips_through_json(self):
        cfg = ex.ExperimentConfig("cdc_sweep", scales=[0.5], seed=7)
        blob = json.loads(json.dumps(cfg.echo()))
        assert blob["experiment"] == "cdc_sweep"
        assert blob["seed"] == 7

    def test_registry_lists_all_seven(self):
        assert set(ex.EXPERIMENTS) == {
            "wellposed", "illposed", "norm_equivalence", "cdc_sweep",
            "measure_decay", "growth_suite", "campanato_equivalence"}


class TestRunners:
    def test_growth_suite_rows(self, growth_run):
        rep, _ = growth_run
        assert rep.passed
        byname = {r["name"]: r for r in rep.rows}
        q1 = byname["tail_transform_at_one"]
        assert q1["value"] == pytest.approx(5.0, abs=1e-9)
        assert "lemma_table" in rep.tables

    def test_wellposed_small_grid(self):
        rep = ex.run_experiment({"experiment": "wellposed",
                                 "domain": {"shape": "box", "h": 1 / 16},
                                 "tolerances": {"poles": 4}})
        assert rep.passed
        names = [r["name"] for r in rep.rows]
        assert names == ["cdc_ratio", "trace_recovery",
                         "holder_lower_bound", "holder_ratio"]
        fields, rows = rep.tables["measure_row"]
        assert fields == ["face_id", "x", "y", "z", "weight"]
        assert abs(sum(r["weight"] for r in rows) - 1.0) <= 1e-6

    def test_illposed_power_data(self):
        rep = ex.run_experiment({"experiment": "illposed", "domain": EXT4})
        assert rep.passed
        sep = next(r for r in rep.rows if r["name"] == "separation")
        assert sep["value"] >= sep["bound"] > 0

    def test_illposed_constant_data_coincides(self):
        rep = ex.run_experiment({"experiment": "illposed", "domain": EXT4,
                                 "tolerances": {"constant_data": 2.5}})
        sep = next(r for r in rep.rows if r["name"] == "separation")
        assert sep["pass"]
        assert sep["note"] == "solutions coincide"
        assert sep["value"] == 0.0

    def test_norm_equivalence_rows(self):
        rep = ex.run_experiment({"experiment": "norm_equivalence",
                                 "domain": BOX12})
        assert rep.passed
        kinds = {r["name"].rsplit("_", 1)[-1] for r in rep.rows}
        assert {"solution", "boundary"} <= kinds
        fields, rows = rep.tables["equivalence_table"]
        assert fields[:3] == ["name", "kind", "holder"]
        assert len(rows) == 10

    def test_cdc_sweep_table_header(self):
        rep = ex.run_experiment({"experiment": "cdc_sweep",
                                 "domain": {"shape": "box", "h": 1 / 16},
                                 "scales": [0.5],
                                 "tolerances": {"sample": "stride:256"}})
        assert rep.passed
        fields, rows = rep.tables["cdc_table"]
        assert fields == ["x_id", "r", "cap_num", "cap_den", "ratio"]
        assert all(0 < r["ratio"] <= 1.5 for r in rows)

    def test_measure_decay_interior(self):
        rep = ex.run_experiment({"experiment": "measure_decay",
                                 "domain": {"shape": "box", "h": 1 / 32}})
        assert rep.passed
        fields, _ = rep.tables["decay_table"]
        assert fields == ["scale", "pole_distance", "mass", "bound"]

    def test_measure_decay_exterior_branch(self):
        rep = ex.run_experiment({"experiment": "measure_decay",
                                 "domain": EXT4,
                                 "tolerances": {"ff_r2_min": 0.9}})
        names = [r["name"] for r in rep.rows]
        assert "far_field_exponent" in names
        assert "far_field_table" in rep.tables

    def test_campanato_equivalence_rows(self):
        rep = ex.run_experiment({"experiment": "campanato_equivalence",
                                 "domain": BOX12})
        assert rep.passed
        ident = next(r for r in rep.rows
                     if r["name"] == "oscillation_identity")
        assert ident["value"] <= 1e-9

    def test_rows_cite_their_module(self):
        rep = ex.run_experiment({"experiment": "growth_suite"})
        for row in rep.rows:
            assert "." in row["source"]
            assert set(row) == {"name", "value", "bound", "pass", "source",
                                "note"}

    def test_module_error_becomes_failure_row(self):
        rep = ex.run_experiment({"experiment": "cdc_sweep",
                                 "domain": {"shape": "box", "h": 1 / 16},
                                 "scales": [0.01]})
        assert not rep.passed
        assert rep.error is not None
        assert rep.rows[-1]["name"] == "experiment_error"
        assert "ScaleOutOfRange" in rep.rows[-1]["note"]


class TestEmission:
    def test_artifacts_exist_and_manifest_matches(self, growth_run):
        rep, out = growth_run
        assert rep.artifacts
        for path in rep.artifacts:
            assert os.path.exists(path)
        assert os.path.join(out, "run.json") in rep.artifacts
        assert os.path.join(out, "lemma_table.csv") in rep.artifacts

    def test_run_json_schema(self, growth_run):
        rep, out = growth_run
        with open(os.path.join(out, "run.json")) as fh:
            blob = json.load(fh)
        assert set(blob) == {"experiment", "config", "pass", "rows",
                             "artifacts", "wall_time"}
        assert blob["pass"] is True
        assert blob["experiment"] == "growth_suite"
        assert blob["config"]["tolerances"]["alpha"] == 0.5

    def test_plotdata_and_figures_written(self, growth_run):
        _, out = growth_run
        plot = os.path.join(out, "plotdata", "growth_curves.csv")
        fig = os.path.join(out, "figures", "growth_curves.png")
        assert os.path.exists(plot)
        assert os.path.exists(fig)
        header = open(plot).readline().strip().split(",")
        assert header[0] == "t"

    def test_rerun_is_byte_identical(self, tmp_path):
        outs = []
        for k in range(2):
            rep = ex.run_experiment({"experiment": "growth_suite"})
            out = tmp_path / f"run{k}"
            ex.emit_report(rep, str(out))
            outs.append(out)
        for rel in ("lemma_table.csv", os.path.join("plotdata",
                                                    "growth_curves.csv")):
            a = (outs[0] / rel).read_bytes()
            b = (outs[1] / rel).read_bytes()
            assert a == b

    def test_empty_report_yields_run_json_only(self, tmp_path):
        rep = ex.RunReport({"experiment": "growth_suite"}, [], {}, [], 0.0)
        ex.emit_report(rep, str(tmp_path / "empty"))
        assert sorted(os.listdir(tmp_path / "empty")) == ["run.json"]

    def test_failure_report_still_emitted(self, tmp_path):
        rep = ex.run_experiment({"experiment": "cdc_sweep",
                                 "domain": {"shape": "box", "h": 1 / 16},
                                 "scales": [0.01]})
        ex.emit_report(rep, str(tmp_path))
        with open(tmp_path / "run.json") as fh:
            blob = json.load(fh)
        assert blob["pass"] is False
        assert blob["rows"][-1]["name"] == "experiment_error"


class TestCli:
    @staticmethod
    def write_config(tmp_path, cfg):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    def test_list_exits_zero(self, capsys):
        assert cli.main(["list"]) == 0
        out = capsys.readouterr().out
        for exp_id in ex.EXPERIMENTS:
            assert exp_id in out

    def test_no_command_prints_help(self, capsys):
        assert cli.main([]) == 2

    def test_unknown_subcommand_is_an_error(self):
        with pytest.raises(SystemExit):
            cli.main(["not_an_experiment", "--config", "x.json"])

    def test_run_pass_exit_zero(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, {"phi": {"family": "power",
                                                   "a": 0.3}})
        code = cli.main(["growth_suite", "--config", cfg,
                         "--out", str(tmp_path / "out")])
        assert code == 0
        out = capsys.readouterr().out
        assert "pass  tail_doubling" in out
        assert os.path.exists(tmp_path / "out" / "run.json")

    def test_tol_override_can_fail_run(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, {"tolerances":
                                           {"q1_expected": 5.0}})
        code = cli.main(["growth_suite", "--config", cfg,
                        "--out", str(tmp_path / "out"),
                         "--tol", "q1_expected=4.9"])
        assert code == 1
        assert "FAIL" in capsys.readouterr().out

    def test_subcommand_wins_over_config_id(self, tmp_path):
        cfg = self.write_config(tmp_path, {"experiment": "wellposed"})
        code = cli.main(["growth_suite", "--config", cfg,
                         "--out", str(tmp_path / "out")])
        assert code == 0
        with open(tmp_path / "out" / "run.json") as fh:
            assert json.load(fh)["experiment"] == "growth_suite"

    def test_bad_tol_syntax_rejected(self, tmp_path):
        cfg = self.write_config(tmp_path, {})
        with pytest.raises(SystemExit):
            cli.main(["growth_suite", "--config", cfg, "--tol", "oops"])

    def test_seed_flag_flows_into_config(self, tmp_path):
        cfg = self.write_config(tmp_path, {"seed": 1})
        cli.main(["growth_suite", "--config", cfg,
                  "--out", str(tmp_path / "out"), "--seed", "99"])
        with open(tmp_path / "out" / "run.json") as fh:
            assert json.load(fh)["config"]["seed"] == 99
