"""
sik: grid-free sparse inverse problems over measures.

Reconstruct finitely many weighted point sources from indirect, noisy
measurements, certify the reconstructions and compare sensor designs by
their closed-form linearized error.
"""

__version__ = "0.1.0"

from sik.exceptions import ConfigError, ConvergenceError, NumericalError, SikError, SingularFisherError
from sik.kernels import Kernel, make_kernel
from sik.measures import ParamVec, SparseMeasure, params_from_measure
from sik.models import (
    Box,
    ExperimentConfig,
    KernelFamily,
    KernelSpec,
    SensorConfig,
)

__all__ = [
    "Box",
    "ConfigError",
    "ConvergenceError",
    "ExperimentConfig",
    "Kernel",
    "KernelFamily",
    "KernelSpec",
    "NumericalError",
    "ParamVec",
    "SensorConfig",
    "SikError",
    "SingularFisherError",
    "SparseMeasure",
    "make_kernel",
    "params_from_measure",
]
