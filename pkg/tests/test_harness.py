"""Config validation, digesting, pipeline orchestration, emission, CLI."""

import json

import numpy as np
import pytest

import contraction_lab as cl
from contraction_lab.cli import main as cli_main
from contraction_lab.errors import (
    ConfigInvariantError,
    ConfigSyntaxError,
    UnknownConfigKeyError,
)
from contraction_lab.runner import EXPLORATORY_LABEL

SMALL_CONFIG = """
problem:
  n_dim: 12
  spectrum: {family: mild, alpha: 1.0}
  coupling: {kind: identity}
  prior: {family: power, delta: 1.0}
truth: {gamma: 2.0}
run:
  pipelines: [gn]
  n_grid: [100, 1000, 10000, 100000]
  mc: 300
  y_replicates: 4
  master_seed: 99
  k_max: 6
outputs:
  formats: [csv]
"""


class TestParseConfig:
    def test_minimal_config_fills_defaults(self):
        config = cl.parse_config("problem: {spectrum: {family: mild, alpha: 1.0}}")
        assert config.data["problem"]["n_dim"] == 512
        assert config.data["run"]["mc"] == 2000
        assert config.data["run"]["y_replicates"] == 50
        assert config.data["run"]["delta_level"] == 0.1
        assert config.data["plan"] == "auto"

    def test_unsorted_grid_names_field(self):
        with pytest.raises(ConfigInvariantError) as err:
            cl.parse_config("run: {n_grid: [100, 50, 1000, 10000]}")
        assert "run.n_grid" in str(err.value)

    def test_unknown_key_suggests_spelling(self):
        with pytest.raises(UnknownConfigKeyError) as err:
            cl.parse_config("problem: {pirors: {family: power}}")
        assert err.value.suggestion == "prior"

    def test_syntax_error_carries_location(self):
        with pytest.raises(ConfigSyntaxError) as err:
            cl.parse_config("run: {n_grid: [100, 200\n")
        assert err.value.line is not None

    def test_unknown_pipeline_and_format(self):
        with pytest.raises(ConfigInvariantError):
            cl.parse_config("run: {pipelines: [warp]}")
        with pytest.raises(ConfigInvariantError):
            cl.parse_config("outputs: {formats: [xml]}")

    def test_plan_keys_checked(self):
        with pytest.raises(UnknownConfigKeyError):
            cl.parse_config("plan: {eps: 0.1}")
        with pytest.raises(ConfigInvariantError):
            cl.parse_config("plan: 17")


class TestDigest:
    def test_whitespace_and_order_insensitive(self):
        a = cl.parse_config("run: {mc: 700, y_replicates: 3}\nproblem: {n_dim: 8}")
        b = cl.parse_config("problem:\n  n_dim:    8\nrun:\n  y_replicates: 3\n  mc: 700\n")
        assert a.digest == b.digest

    def test_explicit_default_matches_omitted(self):
        assert cl.parse_config("run: {mc: 2000}").digest == cl.parse_config("").digest

    def test_semantic_change_changes_digest(self):
        a = cl.parse_config("run: {mc: 700}")
        b = cl.parse_config("run: {mc: 701}")
        assert a.digest != b.digest

    def test_seed_override_is_semantic(self):
        a = cl.parse_config("")
        assert a.with_master_seed(1).digest != a.digest


class TestRunExperiment:
    def test_same_config_identical_tables(self):
        config = cl.parse_config(SMALL_CONFIG)
        rec1 = cl.run_experiment(config)
        rec2 = cl.run_experiment(config)
        assert rec1.config_digest == rec2.config_digest
        assert rec1.tables == rec2.tables

    def test_single_pipeline_single_table(self):
        record = cl.run_experiment(cl.parse_config(SMALL_CONFIG))
        assert len(record.tables) == 1
        assert record.tables[0].name == "g_table"
        assert record.tables[0].config_digest == record.config_digest

    def test_severe_rate_fit_labelled_exploratory(self):
        config = cl.parse_config("""
problem:
  n_dim: 10
  spectrum: {family: severe, alpha1: 0.0, alpha2: 0.0, c0: 0.1, beta: -1.0}
run:
  pipelines: [rate-fit]
  n_grid: [100, 1000, 10000, 100000]
  mc: 200
  y_replicates: 4
  master_seed: 5
""")
        record = cl.run_experiment(config)
        assert not record.failures
        assert record.table("rate_fit").label == EXPLORATORY_LABEL

    def test_pipeline_failure_is_entry_not_exception(self):
        config = cl.parse_config("""
problem:
  n_dim: 8
  spectrum: {family: severe, alpha1: 0.0, alpha2: 0.0, c0: 0.1, beta: -1.0}
run: {pipelines: [check], n_grid: [100, 1000], mc: 50, y_replicates: 2}
""")
        record = cl.run_experiment(config)  # auto plan needs a mild spectrum
        assert "check" in record.failures
        assert record.tables == ()

    def test_workers_do_not_change_tables(self):
        config = cl.parse_config(SMALL_CONFIG)
        assert cl.run_experiment(config, workers=1).tables == \
            cl.run_experiment(config, workers=8).tables


class TestEmit:
    def test_empty_record_valid_header_only_csv(self, tmp_path):
        record = cl.ResultRecord("deadbeef", "2026-01-01T00:00:00+00:00",
                                 (cl.Table("empty", ("a", "b"), (), {}, "deadbeef"),))
        paths = cl.emit_results(record, "csv", tmp_path)
        text = (tmp_path / "empty.csv").read_text()
        assert text == "a,b\n"
        assert any(p.name == "metadata.json" for p in paths)

    def test_rate_fit_column_contract(self, tmp_path):
        config = cl.parse_config("""
problem: {n_dim: 10}
run:
  pipelines: [rate-fit]
  n_grid: [100, 1000, 10000, 100000]
  mc: 150
  y_replicates: 3
  master_seed: 3
""")
        record = cl.run_experiment(config)
        cl.emit_results(record, "csv", tmp_path)
        header = (tmp_path / "rate_fit.csv").read_text().splitlines()[0]
        assert header == "n,xi_hat,exceedance_frac,slope,slope_lo,slope_hi"

    def test_json_round_trip(self, tmp_path):
        record = cl.run_experiment(cl.parse_config(SMALL_CONFIG))
        cl.emit_results(record, "json", tmp_path)
        doc = json.loads((tmp_path / "result.json").read_text())
        assert cl.record_from_dict(doc) == record

    def test_plotdata_two_columns(self, tmp_path):
        record = cl.run_experiment(cl.parse_config(SMALL_CONFIG))
        paths = cl.emit_results(record, "plotdata", tmp_path)
        assert paths
        for line in paths[0].read_text().splitlines():
            assert len(line.split()) == 2

    def test_unwritable_path_is_os_error(self, tmp_path):
        record = cl.ResultRecord("d", "t", (cl.Table("t", ("a",), ((1,),), {}, "d"),))
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        with pytest.raises(OSError):
            cl.emit_results(record, "csv", blocker)

    def test_timestamps_confined_to_metadata(self, tmp_path):
        """Re-running the same config gives byte-identical data tables."""
        config = cl.parse_config(SMALL_CONFIG)
        a, b = tmp_path / "a", tmp_path / "b"
        cl.emit_results(cl.run_experiment(config), "csv", a)
        cl.emit_results(cl.run_experiment(config), "csv", b)
        assert (a / "g_table.csv").read_bytes() == (b / "g_table.csv").read_bytes()


class TestCli:
    def _write(self, tmp_path, text=SMALL_CONFIG):
        path = tmp_path / "config.yaml"
        path.write_text(text)
        return path

    def test_pipeline_run_success(self, tmp_path, capsys):
        path = self._write(tmp_path)
        code = cli_main(["gn", "--config", str(path), "--out", str(tmp_path / "out")])
        assert code == 0
        assert (tmp_path / "out" / "g_table.csv").exists()
        assert "g_table" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = self._write(tmp_path, "problem: {pirors: 2}")
        assert cli_main(["gn", "--config", str(path)]) == 1

    def test_missing_file_exit_code(self, tmp_path, capsys):
        assert cli_main(["gn", "--config", str(tmp_path / "nope.yaml")]) == 3

    def test_seed_flag_changes_digest(self, tmp_path):
        path = self._write(tmp_path)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert cli_main(["gn", "--config", str(path), "--out", str(out1), "--format", "json"]) == 0
        assert cli_main(["gn", "--config", str(path), "--out", str(out2),
                         "--format", "json", "--seed", "123"]) == 0
        d1 = json.loads((out1 / "result.json").read_text())["config_digest"]
        d2 = json.loads((out2 / "result.json").read_text())["config_digest"]
        assert d1 != d2

    def test_failed_pipeline_exit_code(self, tmp_path, capsys):
        path = self._write(tmp_path, """
problem:
  n_dim: 8
  spectrum: {family: severe, alpha1: 0.0, alpha2: 0.0, c0: 0.1, beta: -1.0}
run: {pipelines: [check], n_grid: [100, 1000], mc: 50, y_replicates: 2}
""")
        assert cli_main(["check", "--config", str(path), "--out", str(tmp_path / "out")]) == 2


class TestPipelines:
    @pytest.mark.parametrize("pipeline,table", [
        ("simulate", "simulate"),
        ("posterior", "posterior_exceedance"),
        ("check", "assumption_checks"),
        ("smallball", "small_ball"),
        ("minmax", "minmax_ratios"),
        ("hs", "hs_diagnostic"),
        ("concentration", "concentration"),
        ("findim", "findim_rate"),
    ])
    def test_each_pipeline_produces_its_table(self, pipeline, table):
        config = cl.parse_config(f"""
problem:
  n_dim: 10
  coupling: {{kind: banded}}
run:
  pipelines: [{pipeline}]
  n_grid: [100, 1000, 10000, 100000]
  mc: 300
  y_replicates: 3
  master_seed: 17
""")
        record = cl.run_experiment(config)
        assert not record.failures, record.failures
        assert record.table(table).rows
