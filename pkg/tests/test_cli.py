import json

import numpy as np
import pytest
from click.testing import CliRunner

from convlab.cli import main
from convlab.experiments import named_config, run_experiment, write_csv


@pytest.fixture
def runner():
    return CliRunner()


class TestRun:
    def test_fig1_writes_expected_files(self, runner, tmp_path):
        result = runner.invoke(main, ["run", "fig1", "--seed", "7", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        names = {p.name for p in tmp_path.iterdir()}
        assert {"fig1_path.csv", "fig1_weights.csv", "fig1_weights.png",
                "fig1_metadata.json"} <= names

    def test_metadata_carries_seed_and_assumptions(self, runner, tmp_path):
        result = runner.invoke(main, ["run", "fig1", "--seed", "9", "--out", str(tmp_path)])
        assert result.exit_code == 0
        meta = json.loads((tmp_path / "fig1_metadata.json").read_text())
        assert meta["seed"] == 9
        assert "T" in meta["assumptions"]
        assert meta["params"]["market"]["b1"] == 0.3

    def test_unknown_experiment_is_usage_error(self, runner):
        result = runner.invoke(main, ["run", "fig9"])
        assert result.exit_code == 2

    def test_custom_config_round_trip(self, runner, tmp_path):
        cfg = tmp_path / "p.toml"
        cfg.write_text(
            """
[market]
r = 0.02
mu_m = 0.05
sigma_m = 0.35
beta1 = 1.2
beta2 = 1.05
sigma = 0.3
b1 = 0.3
b2 = 0.2
T = 0.5

[regimes]
lambda1 = [0.5, -0.3]
lambda2 = [-0.2, 0.6]
alpha1 = [0.0, 0.0]
alpha2 = [0.0, 0.0]

[chain]
Q = [[-0.01, 0.01], [0.02, -0.02]]
initial = [1.0, 0.0]
"""
        )
        out = tmp_path / "out"
        result = runner.invoke(
            main, ["run", "fig1", "--config", str(cfg), "--out", str(out)])
        assert result.exit_code == 0, result.output
        meta = json.loads((out / "fig1_metadata.json").read_text())
        assert meta["params"]["market"]["T"] == 0.5

    def test_invalid_config_exits_2(self, runner, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[market]\nr = 0.02\n")
        result = runner.invoke(main, ["run", "fig1", "--config", str(cfg)])
        assert result.exit_code == 2
        assert "config error" in result.output


class TestWeights:
    def test_table_has_header_and_rows(self, runner):
        result = runner.invoke(main, ["weights", "--x-grid", "-0.5:0.5:3"])
        assert result.exit_code == 0
        lines = result.output.strip().splitlines()
        assert lines[0] == "info,variant,state,x,h1,h2,hm"
        # 3 full variants x 2 regimes x 3 spreads
        assert sum(l.startswith("full,") for l in lines) == 18

    def test_bad_grid_is_usage_error(self, runner):
        result = runner.invoke(main, ["weights", "--x-grid", "nonsense"])
        assert result.exit_code == 2


class TestCheck:
    def test_single_criterion_exits_zero(self, runner):
        result = runner.invoke(main, ["check", "--only", "2"])
        assert result.exit_code == 0
        assert "[PASS]" in result.output
        assert "1/1 checks passed" in result.output


class TestCsvFormat:
    def test_write_csv_lf_and_dot_decimal(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ["a", "b"], [np.array([1.5, 2.0]), np.array([3, 4])])
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw.decode() == "a,b\n1.5,3\n2,4\n"

    def test_experiment_rerun_is_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_experiment(named_config("fig1", seed=3, out_dir=out1))
        run_experiment(named_config("fig1", seed=3, out_dir=out2))
        for f in sorted(out1.iterdir()):
            assert f.read_bytes() == (out2 / f.name).read_bytes(), f.name
