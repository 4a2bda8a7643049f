"""Shared fixtures: the three-spike Gaussian reference problem."""

import pytest

from sik.kernels import make_kernel
from sik.measures import SparseMeasure, params_from_measure
from sik.models import Box, ExperimentConfig, KernelSpec, SensorConfig

TRUTH_ATOMS = [(0.4, -0.7), (0.3, -0.3), (-0.2, 0.3)]
SELECTED_POINTS = [-0.8, -0.6, -0.4, -0.1, 0.1, 0.4]


@pytest.fixture
def domain():
    return Box(lower=[-1.0], upper=[1.0])


@pytest.fixture
def kernel_spec():
    return KernelSpec(sigma=0.2, normalize=True)


@pytest.fixture
def kernel(kernel_spec):
    return make_kernel(kernel_spec)


@pytest.fixture
def truth(domain):
    return SparseMeasure.from_atoms(TRUTH_ATOMS, domain)


@pytest.fixture
def m_ref(truth):
    return params_from_measure(truth)


@pytest.fixture
def sensors9():
    return SensorConfig.uniform(9)


@pytest.fixture
def sensors11():
    return SensorConfig.uniform(11)


@pytest.fixture
def sensors6():
    return SensorConfig.uniform(6)


@pytest.fixture
def selected_sensors():
    return SensorConfig(x=SELECTED_POINTS, sigma0_sq="uniform")


@pytest.fixture
def config_dict():
    """Small experiment config for fast harness and CLI runs."""
    return {
        "name": "unit",
        "kernel": {"family": "gaussian", "sigma": 0.2, "normalize": True},
        "ground_truth": [{"weight": w, "position": y} for w, y in TRUTH_ATOMS],
        "sensor_sets": [
            {"name": "uniform9", "uniform": 9},
            {"name": "uniform6", "uniform": 6},
        ],
        "studies": ["uniform9"],
        "beta0": [2.0],
        "p": [1e4],
        "samples": 3,
        "seed": 11,
        "certificate_resolution": 512,
        "bounds_resolution": 64,
        "pdap": {"grid_resolution": 512},
    }


@pytest.fixture
def experiment_config(config_dict):
    return ExperimentConfig(**config_dict)
