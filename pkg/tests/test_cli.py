"""Tests for the command-line interface."""

import json

import pytest
import yaml
from click.testing import CliRunner

from sik import __version__
from sik.cli import EXIT_CONFIG, EXIT_NUMERICAL, main


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tmp_path, config_dict):
    path = tmp_path / "unit.yaml"
    path.write_text(yaml.dump(config_dict))
    return path


def test_version(runner):
    """Test --version prints the package version."""
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_init_then_criterion(runner, tmp_path):
    """Test the sample config drives the criterion command."""
    config = tmp_path / "sample.yaml"
    result = runner.invoke(main, ["init", "-o", str(config)])
    assert result.exit_code == 0
    assert config.exists()

    out = tmp_path / "out"
    result = runner.invoke(main, ["criterion", str(config), "-o", str(out), "-f", "md"])
    assert result.exit_code == 0, result.output
    assert "✓ uniform9" in result.output
    rows = json.loads((out / "criterion.json").read_text())
    assert [r["sensor_set"] for r in rows] == ["uniform9", "selected"]
    assert rows[0]["expected_mse"] == pytest.approx(7.972603628e-3, rel=1e-5)
    assert (out / "criterion.md").exists()


def test_init_json(runner, tmp_path):
    """Test the JSON sample config."""
    config = tmp_path / "sample.json"
    result = runner.invoke(main, ["init", "-o", str(config), "-f", "json"])
    assert result.exit_code == 0
    assert json.loads(config.read_text())["sensor_sets"][0]["name"] == "uniform9"


def test_bad_config_suffix(runner, tmp_path):
    """Test configuration errors exit with code 2."""
    config = tmp_path / "experiment.txt"
    config.write_text("name: x\n")
    result = runner.invoke(main, ["criterion", str(config), "-o", str(tmp_path)])
    assert result.exit_code == EXIT_CONFIG
    assert "Error:" in result.output


def test_unknown_sensor_set(runner, tmp_path, config_file):
    """Test a missing sensor set name exits with code 2."""
    result = runner.invoke(main, ["constants", str(config_file), "-o", str(tmp_path), "-s", "missing"])
    assert result.exit_code == EXIT_CONFIG


def test_constants_without_admissible_certificate(runner, tmp_path, config_file):
    """Test six sensors give a numerical error with exit code 3."""
    result = runner.invoke(main, ["constants", str(config_file), "-o", str(tmp_path), "-s", "uniform6"])
    assert result.exit_code == EXIT_NUMERICAL
    assert "admissible" in result.output


def test_constants(runner, tmp_path, config_file):
    """Test the constants file for nine sensors."""
    result = runner.invoke(main, ["constants", str(config_file), "-o", str(tmp_path), "-f", "html"])
    assert result.exit_code == 0, result.output
    data = json.loads((tmp_path / "constants.json").read_text())
    assert data["sensor_set"] == "uniform9"
    assert len(data["cells"]) == 1
    assert 0.0 <= data["cells"][0]["good_event_probability"] <= 1.0
    assert (tmp_path / "constants.html").read_text().startswith("<!DOCTYPE html>")


def test_certify_markdown(runner, tmp_path, config_file, config_dict):
    """Test admissibility of every configured sensor set."""
    config_dict["studies"] = None
    config_file.write_text(yaml.dump(config_dict))
    result = runner.invoke(main, ["certify", str(config_file), "-o", str(tmp_path), "-f", "md"])
    assert result.exit_code == 0, result.output
    assert "✓ uniform9" in result.output
    assert "✗ uniform6" in result.output
    data = json.loads((tmp_path / "certificate.json").read_text())
    assert data["uniform9"]["admissible"] is True
    assert data["uniform6"] is None or data["uniform6"]["admissible"] is False
    assert (tmp_path / "certificate.md").read_text().startswith("# Pre-certificate admissibility")


def test_reconstruct_exact(runner, tmp_path, config_file):
    """Test exact-data reconstruction writes the artifact bundle."""
    result = runner.invoke(main, ["reconstruct", str(config_file), "-o", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "✓ PDAP converged" in result.output
    assert (tmp_path / "mu_bar.json").exists()
    assert (tmp_path / "certificate_curve.csv").exists()


def test_mse_with_bound_check(runner, tmp_path, config_file):
    """Test the Monte-Carlo command and its bound check."""
    result = runner.invoke(
        main, ["mse", str(config_file), "-o", str(tmp_path), "-t", "2", "--check-bound", "-f", "md"]
    )
    assert result.exit_code == 0, result.output
    header = (tmp_path / "results.csv").read_text().splitlines()[0]
    assert header == "experiment,sensor_set,beta0,p,estimator,mean_hk2,stderr,expected_mse,samples,seed"
    checks = json.loads((tmp_path / "bound_check.json").read_text())
    assert len(checks) == 1
    assert (tmp_path / "mse.md").exists()


def test_mse_rejects_zero_threads(runner, tmp_path, config_file):
    """Test --threads must be positive."""
    result = runner.invoke(main, ["mse", str(config_file), "-o", str(tmp_path), "-t", "0"])
    assert result.exit_code == 2


@pytest.mark.parametrize("command", ["criterion", "certify", "constants"])
def test_json_only_commands_reject_csv(runner, tmp_path, config_file, command):
    """Test commands without a CSV table refuse --format csv."""
    result = runner.invoke(main, [command, str(config_file), "-o", str(tmp_path), "-f", "csv"])
    assert result.exit_code == 2
    assert "Invalid value" in result.output
    assert not list(tmp_path.glob("*.json"))


def test_mse_accepts_csv(runner, tmp_path, config_file):
    """Test --format csv stays available where a CSV table is written."""
    result = runner.invoke(main, ["mse", str(config_file), "-o", str(tmp_path), "-f", "csv"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "results.csv").exists()
