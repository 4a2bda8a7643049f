"""Tests for config loading, Monte-Carlo studies and result files."""

import csv
import json
import math
from importlib import resources

import numpy as np
import pytest
import yaml

from sik.exceptions import ConfigError, SingularFisherError
from sik.forward import sample_noise, sample_seed
from sik.harness import (
    CSV_HEADER,
    Experiment,
    check_theorem_bound,
    emit_results,
    fmt,
    linearization_remainder,
    load_experiment,
    run_mse_study,
    run_parameter_sweep,
    run_reconstruction,
    run_study_cell,
    write_bundle,
)
from sik.models import Estimator, ExperimentConfig, PdapConfig, ResultRecord, SensorSetSpec

# Reference Monte-Carlo means for nine sensors, beta0 = 2, p = 1e4.
REFERENCE_MC_PDAP = 5.435915e-3
REFERENCE_MC_GAUSS_NEWTON = 5.428403e-3


@pytest.fixture
def yaml_config(tmp_path, config_dict):
    path = tmp_path / "experiment.yaml"
    path.write_text(yaml.dump(config_dict))
    return path


def _record(**overrides):
    data = dict(
        experiment="unit",
        sensor_set="uniform9",
        beta0=2.0,
        p=1e4,
        estimator=Estimator.PDAP,
        mean_hk2=1e-3,
        stderr=1e-4,
        expected_mse=7.97e-3,
        samples=10,
        seed=0,
    )
    data.update(overrides)
    return ResultRecord(**data)


class TestLoadExperiment:
    """Tests for load_experiment."""

    def test_yaml_and_json(self, tmp_path, yaml_config, config_dict):
        """Test both formats give the same config."""
        json_path = tmp_path / "experiment.json"
        json_path.write_text(json.dumps(config_dict))
        assert load_experiment(yaml_config) == load_experiment(json_path)

    def test_bad_suffix(self, tmp_path):
        """Test unknown suffixes are rejected."""
        path = tmp_path / "experiment.toml"
        path.write_text("name = 'x'")
        with pytest.raises(ConfigError, match="unsupported config format"):
            load_experiment(path)

    def test_invalid_content(self, tmp_path):
        """Test validation errors surface as ConfigError."""
        path = tmp_path / "experiment.yaml"
        path.write_text("name: x\nsamples: 0\n")
        with pytest.raises(ConfigError, match="invalid config"):
            load_experiment(path)

    def test_missing_file(self, tmp_path):
        """Test unreadable files surface as ConfigError."""
        with pytest.raises(ConfigError, match="cannot read"):
            load_experiment(tmp_path / "missing.yaml")

    @pytest.mark.parametrize("name", ["nine_sensors.yaml", "sensor_designs.yaml", "sweep.yaml"])
    def test_shipped_configs(self, name):
        """Test the bundled experiment configs validate."""
        path = resources.files("sik") / "configs" / name
        config = ExperimentConfig(**yaml.safe_load(path.read_text()))
        assert config.samples >= 1


def test_fmt():
    """Test fixed CSV formatting."""
    assert fmt(7.972603628e-3) == "7.972603628e-03"
    assert fmt(3) == "3"
    assert fmt(True) == "true"
    assert fmt(None) == ""
    assert fmt(Estimator.GAUSS_NEWTON) == "gauss_newton"
    assert fmt(np.float64(1.0)) == "1.000000000e+00"


def test_experiment_sensors(experiment_config):
    """Test sensor lookup and validation."""
    exp = Experiment(experiment_config)
    assert exp.sensors("uniform9", 1e4).n_obs == 9
    with pytest.raises(ConfigError, match="unknown sensor set"):
        exp.sensors("missing", 1e4)
    outside = SensorSetSpec(name="outside", x=[[0.0], [1.5]])
    bad = experiment_config.model_copy(update={"sensor_sets": experiment_config.sensor_sets + [outside]})
    with pytest.raises(ConfigError, match="observation domain"):
        Experiment(bad).sensors("outside", 1e4)


def test_experiment_constants_require_admissibility(experiment_config):
    """Test six sensors have no theta and therefore no constants."""
    exp = Experiment(experiment_config)
    assert exp.theta("uniform9") is not None
    assert exp.admissibility("uniform6") is None or not exp.admissibility("uniform6").admissible
    with pytest.raises(SingularFisherError):
        exp.constants("uniform6", 2.0, 1e4)


def test_emit_results_empty(tmp_path):
    """Test an empty study still writes the header."""
    csv_path, json_path = emit_results([], tmp_path)
    assert csv_path.read_text() == ",".join(CSV_HEADER) + "\n"
    assert json.loads(json_path.read_text()) == []


def test_emit_results_format(tmp_path):
    """Test rows follow the header with fixed float formatting."""
    csv_path, json_path = emit_results([_record()], tmp_path, stem="cell")
    with open(csv_path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == CSV_HEADER
    assert rows[1] == [
        "unit", "uniform9", "2.000000000e+00", "1.000000000e+04", "pdap",
        "1.000000000e-03", "1.000000000e-04", "7.970000000e-03", "10", "0",
    ]
    assert json_path.name == "cell.json"


def test_study_cell(experiment_config):
    """Test one cell produces a record per estimator with consistent metadata."""
    exp = Experiment(experiment_config)
    cell = run_study_cell(exp, "uniform9", 2.0, 1e4)
    assert [r.estimator for r in cell.records] == [
        Estimator.PDAP, Estimator.GAUSS_NEWTON, Estimator.LINEARIZED
    ]
    assert len(cell.samples) == 3
    assert [s.index for s in cell.samples] == [0, 1, 2]
    for record in cell.records:
        assert record.samples == 3
        assert record.admissible
        assert record.expected_mse == pytest.approx(7.972603628e-3, rel=1e-5)
        assert math.isfinite(record.mean_hk2)
    assert 0.0 <= cell.records[0].exact_support_fraction <= 1.0
    assert cell.records[1].exact_support_fraction is None


def test_results_independent_of_threads(tmp_path, experiment_config):
    """Test CSV bytes are identical for one and two worker threads."""
    one, _ = emit_results(run_mse_study(experiment_config, threads=1), tmp_path / "one")
    two, _ = emit_results(run_mse_study(experiment_config, threads=2), tmp_path / "two")
    assert one.read_bytes() == two.read_bytes()


def test_parameter_sweep_runs_pdap_only(experiment_config):
    """Test the sweep covers the beta0 x p grid with PDAP records."""
    config = experiment_config.model_copy(update={"samples": 2})
    records = run_parameter_sweep(config, beta0s=(0.5, 2.0), ps=(1e4,))
    assert [(r.beta0, r.p) for r in records] == [(0.5, 1e4), (2.0, 1e4)]
    assert all(r.estimator == Estimator.PDAP for r in records)


def test_check_theorem_bound(experiment_config):
    """Test the bound is 8 * expected_mse plus the bad-event term and only PDAP is checked."""
    exp = Experiment(experiment_config)
    constants = exp.constants("uniform9", 2.0, 1e4)
    records = [_record(), _record(estimator=Estimator.LINEARIZED), _record(mean_hk2=1e9)]
    checks = check_theorem_bound(records, constants)
    assert len(checks) == 2
    assert checks[0].bound == pytest.approx(8.0 * 7.97e-3 + constants.bad_event_bound)
    assert checks[0].holds
    assert not checks[1].holds
    keyed = check_theorem_bound(records[:1], {("uniform9", 2.0, 1e4): constants})
    assert keyed[0].bound == checks[0].bound


def test_reconstruction_exact_data(tmp_path, experiment_config):
    """Test exact-data reconstruction with nine sensors and its artifact files."""
    bundle = run_reconstruction(experiment_config, "uniform9")
    assert bundle.exact_data
    assert bundle.admissibility.admissible
    assert bundle.mu_bar.n_atoms == 3
    assert bundle.hk_pdap_vs_gn is not None
    written = write_bundle(bundle, tmp_path)
    names = {p.name for p in written}
    assert names == {
        "mu_bar.json", "mu_hat.json", "solve_reports.json", "admissibility.json",
        "certificate_curve.csv", "atoms.csv",
    }
    curve = (tmp_path / "certificate_curve.csv").read_text().splitlines()
    assert curve[0] == "y,eta"
    assert len(curve) == experiment_config.certificate_resolution + 1


def test_reconstruction_six_sensors(experiment_config):
    """Test six sensors are classified as inadmissible from exact data."""
    bundle = run_reconstruction(experiment_config, "uniform6")
    assert bundle.admissibility is None or not bundle.admissibility.admissible


def test_reconstruction_external_data(experiment_config):
    """Test user data of the wrong length is rejected."""
    with pytest.raises(ConfigError):
        run_reconstruction(experiment_config, "uniform9", observation=np.zeros(4))


def test_linearization_remainder_ladder(experiment_config):
    """Test the remainder stays quadratic along a six-rung noise ladder."""
    exp = Experiment(experiment_config)
    sensors = exp.sensors("uniform9", 1e4)
    eps = sample_noise(sensors, sample_seed(0, 0))
    ratios = []
    for rung in range(6):
        scale = 2.0 ** -rung
        remainder, size = linearization_remainder(exp, sensors, scale * eps, 0.002 * scale)
        ratios.append(remainder / size**2)
    assert all(np.isfinite(ratios))
    assert max(ratios) <= 10.0 * min(ratios) + 1e-6


@pytest.mark.slow
def test_nine_sensor_monte_carlo(experiment_config):
    """Test nine-sensor Monte-Carlo means against the closed form and reference values."""
    config = experiment_config.model_copy(update={"samples": 1000, "seed": 0, "pdap": PdapConfig()})
    cell = run_study_cell(Experiment(config), "uniform9", 2.0, 1e4, threads=4)
    by_estimator = {r.estimator: r for r in cell.records}
    pdap = by_estimator[Estimator.PDAP]
    gauss_newton = by_estimator[Estimator.GAUSS_NEWTON]
    linear = by_estimator[Estimator.LINEARIZED]
    assert abs(linear.mean_hk2 - linear.expected_mse) <= 3.0 * linear.stderr
    assert pdap.mean_hk2 == pytest.approx(REFERENCE_MC_PDAP, rel=0.1)
    assert gauss_newton.mean_hk2 == pytest.approx(REFERENCE_MC_GAUSS_NEWTON, rel=0.1)
    assert pdap.exact_support_fraction >= 0.95


@pytest.mark.slow
def test_linearized_monte_carlo_matches_closed_form(experiment_config):
    """Test the linearized estimator reproduces the closed-form MSE within 2%."""
    config = experiment_config.model_copy(
        update={
            "samples": 100000,
            "estimators": experiment_config.estimators.model_copy(
                update={"pdap": False, "gauss_newton": False, "linearized": True}
            ),
        }
    )
    cell = run_study_cell(Experiment(config), "uniform9", 2.0, 1e4, threads=4)
    record = cell.records[0]
    assert record.mean_hk2 == pytest.approx(record.expected_mse, rel=0.02)


@pytest.mark.slow
def test_exact_support_regimes(experiment_config):
    """Test large beta0 recovers the support more often than small beta0."""
    config = experiment_config.model_copy(update={"samples": 100, "seed": 0})
    records = run_parameter_sweep(config, beta0s=(0.5, 2.0), ps=(1e4,), threads=4)
    small, large = records
    assert large.exact_support_fraction >= 0.95
    assert small.exact_support_fraction < large.exact_support_fraction

    cell = run_study_cell(Experiment(config), "uniform9", 2.0, 1e4, threads=4)
    matched = [s.hk_pdap_vs_gn for s in cell.samples if s.pdap_atoms == 3]
    assert len(matched) >= 95
    # HK values are certified to a duality gap of about 1e-9 on the square
    assert max(matched) <= 1e-4


@pytest.mark.slow
def test_bound_holds_across_precisions(experiment_config):
    """Test the PDAP error stays below the explicit bound for increasing p."""
    config = experiment_config.model_copy(update={"samples": 50, "p": [1e4, 1e5, 1e6]})
    exp = Experiment(config)
    for p in config.p:
        cell = run_study_cell(exp, "uniform9", 2.0, p, threads=4)
        checks = check_theorem_bound(cell.records, cell.constants)
        assert checks and all(c.holds for c in checks)
