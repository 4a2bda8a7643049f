"""Tests for configuration and report models."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from sik.models import (
    AtomSpec,
    Box,
    DesignReport,
    Estimator,
    EstimatorToggles,
    ExperimentConfig,
    HkSolveConfig,
    KernelFamily,
    KernelSpec,
    SensorConfig,
    SensorSetSpec,
)


def test_box_interval_shorthand():
    """Test [a, b] builds a 1D box."""
    box = Box.model_validate([-1.0, 1.0])
    assert box.lower == [-1.0]
    assert box.upper == [1.0]
    assert box.dim == 1


def test_box_rejects_empty():
    """Test lower >= upper is rejected."""
    with pytest.raises(ValidationError):
        Box(lower=[1.0], upper=[1.0])


def test_box_grid_includes_endpoints():
    """Test the grid is endpoint-inclusive with shape (P, d)."""
    grid = Box(lower=[0.0, 0.0], upper=[1.0, 2.0]).grid(3)
    assert grid.shape == (9, 2)
    assert grid[0].tolist() == [0.0, 0.0]
    assert grid[-1].tolist() == [1.0, 2.0]


def test_box_boundary_distance():
    """Test distance to the nearest face."""
    box = Box(lower=[-1.0], upper=[1.0])
    assert box.boundary_distance(np.array([-0.7])) == pytest.approx(0.3)
    assert box.contains(np.array([[1.0]]))
    assert not box.contains(np.array([[1.1]]))


def test_kernel_spec_defaults():
    """Test default Gaussian kernel spec."""
    spec = KernelSpec()
    assert spec.family == KernelFamily.GAUSSIAN
    assert spec.sigma == 0.2
    assert spec.normalize is False
    assert spec.source_domain.dim == 1


def test_advection_diffusion_requires_2d():
    """Test the advection-diffusion family is two-dimensional."""
    with pytest.raises(ValidationError):
        KernelSpec(family="advection_diffusion")
    spec = KernelSpec(
        family="advection_diffusion",
        obs_domain={"lower": [0, 0], "upper": [1, 1]},
        source_domain={"lower": [0, 0], "upper": [1, 1]},
    )
    assert spec.family == KernelFamily.ADVECTION_DIFFUSION


def test_atom_spec_scalar_position():
    """Test scalar positions are wrapped and zero weights rejected."""
    assert AtomSpec(weight=0.4, position=-0.7).position == [-0.7]
    with pytest.raises(ValidationError):
        AtomSpec(weight=0.0, position=0.1)


def test_sensor_config_uniform_variances():
    """Test the 'uniform' shorthand sets sigma0_sq = N_o."""
    sensors = SensorConfig(x=[-0.5, 0.0, 0.5], sigma0_sq="uniform")
    assert sensors.sigma0_sq == [3.0, 3.0, 3.0]
    assert sensors.points.shape == (3, 1)
    assert sensors.weights.sum() == pytest.approx(1.0)
    assert sensors.n_obs == 3


def test_sensor_config_rejects_unnormalized():
    """Test precisions must sum to one."""
    with pytest.raises(ValidationError):
        SensorConfig(x=[0.0, 0.5], sigma0_sq=[1.0, 1.0])


def test_sensor_config_uniform_classmethod():
    """Test equispaced sensors include both endpoints."""
    sensors = SensorConfig.uniform(9, p=1e5)
    assert sensors.points[0, 0] == -1.0
    assert sensors.points[-1, 0] == 1.0
    assert sensors.p == 1e5
    assert sensors.with_precision(1e6).p == 1e6


def test_sensor_set_spec_needs_one_layout():
    """Test a sensor set needs exactly one of uniform / x."""
    with pytest.raises(ValidationError):
        SensorSetSpec(name="bad")
    with pytest.raises(ValidationError):
        SensorSetSpec(name="bad", uniform=3, x=[0.0])
    spec = SensorSetSpec(name="sel", x=[-0.8, 0.4])
    sensors = spec.build(Box(lower=[-1.0], upper=[1.0]), 1e4)
    assert sensors.n_obs == 2


def test_hk_schedule_validation():
    """Test the entropic schedule must decrease strictly to <= 1e-5."""
    assert HkSolveConfig().eps_schedule[-1] <= 1e-5
    with pytest.raises(ValidationError):
        HkSolveConfig(eps_schedule=[1.0, 1.0, 1e-6])
    with pytest.raises(ValidationError):
        HkSolveConfig(eps_schedule=[1.0, 0.1])


def test_estimator_toggles():
    """Test enabled estimators keep a fixed order."""
    toggles = EstimatorToggles(gauss_newton=False)
    assert toggles.enabled() == [Estimator.PDAP, Estimator.LINEARIZED]


def test_experiment_config_references(config_dict):
    """Test unknown study names and duplicate sensor sets are rejected."""
    config = ExperimentConfig(**config_dict)
    assert [s.name for s in config.active_sensor_sets()] == ["uniform9"]
    with pytest.raises(KeyError):
        config.sensor_set("missing")

    bad = dict(config_dict, studies=["missing"])
    with pytest.raises(ValidationError):
        ExperimentConfig(**bad)

    dup = dict(config_dict, sensor_sets=[{"name": "a", "uniform": 3}, {"name": "a", "uniform": 4}])
    with pytest.raises(ValidationError):
        ExperimentConfig(**dup)


def test_experiment_config_rejects_bad_values(config_dict):
    """Test S >= 1, positive beta0 and in-domain ground truth."""
    with pytest.raises(ValidationError):
        ExperimentConfig(**dict(config_dict, samples=0))
    with pytest.raises(ValidationError):
        ExperimentConfig(**dict(config_dict, beta0=[-1.0]))
    with pytest.raises(ValidationError):
        ExperimentConfig(**dict(config_dict, ground_truth=[{"weight": 1.0, "position": 1.5}]))


def test_design_report_serializes_infinity():
    """Test infinite criterion values survive JSON serialization."""
    report = DesignReport(
        fisher=[[1.0]],
        inv_fisher_wnorm=math.inf,
        trace_term=math.inf,
        bias_term=math.inf,
        psi=math.inf,
        expected_mse=math.inf,
        condition_number=math.inf,
        beta0=2.0,
        p=1e4,
        n_obs=6,
        identifiable=False,
    )
    assert "Infinity" in report.model_dump_json()
