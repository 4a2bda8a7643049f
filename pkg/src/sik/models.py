"""
Configuration and report schemas, validated with Pydantic.

Everything a user writes into a config file, and everything the toolkit writes
back out as JSON, is one of the models below. Numerical value types that carry
numpy arrays (measures, parameter vectors, dual functions) live next to the
algorithms that use them.
"""

from __future__ import annotations

from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

NORMALIZATION_TOL = 1e-12


class KernelFamily(str, Enum):
    """Supported integral kernels."""

    GAUSSIAN = "gaussian"
    ADVECTION_DIFFUSION = "advection_diffusion"


class Estimator(str, Enum):
    """Estimators evaluated by the Monte-Carlo harness."""

    PDAP = "pdap"
    GAUSS_NEWTON = "gauss_newton"
    LINEARIZED = "linearized"


class SolveStatus(str, Enum):
    """Terminal state of an iterative solver."""

    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    SIGN_FLIP = "sign_flip"
    SINGULAR = "singular"


class OutputFormat(str, Enum):
    """Output formats understood by the CLI."""

    CSV = "csv"
    JSON = "json"
    MARKDOWN = "md"
    HTML = "html"


def _as_point_list(value: Any) -> Any:
    """Accept scalars as 1D points: [0.1, 0.2] -> [[0.1], [0.2]]."""
    if isinstance(value, (list, tuple)):
        return [[float(v)] if isinstance(v, (int, float)) else v for v in value]
    return value


class Box(BaseModel):
    """Axis-aligned box, lower[i] <= x[i] <= upper[i]."""

    model_config = ConfigDict(frozen=True)

    lower: List[float]
    upper: List[float]

    @model_validator(mode="before")
    @classmethod
    def parse_interval(cls, data: Any) -> Any:
        # [a, b] is shorthand for a 1D interval
        if isinstance(data, (list, tuple)) and len(data) == 2:
            if all(isinstance(v, (int, float)) for v in data):
                return {"lower": [data[0]], "upper": [data[1]]}
        return data

    @model_validator(mode="after")
    def check_bounds(self) -> Box:
        if not self.lower or len(self.lower) != len(self.upper):
            raise ValueError("box bounds must be non-empty and of equal length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"empty box: lower={self.lower}, upper={self.upper}")
        return self

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> bool:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return bool(np.all(pts >= lo - tol) and np.all(pts <= hi + tol))

    def clip(self, points: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(points, dtype=float), self.lower, self.upper)

    def boundary_distance(self, point: np.ndarray) -> float:
        """Euclidean distance from an interior point to the box boundary."""
        pt = np.asarray(point, dtype=float)
        return float(min(np.min(pt - self.lower), np.min(np.asarray(self.upper) - pt)))

    def grid(self, resolution: Union[int, Sequence[int]]) -> np.ndarray:
        """Tensor grid with `resolution` points per axis (endpoints included), shape (P, d)."""
        counts = [resolution] * self.dim if isinstance(resolution, int) else list(resolution)
        if len(counts) != self.dim or min(counts) < 2:
            raise ValueError(f"grid resolution must be >= 2 on each of {self.dim} axes")
        axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def _unit_interval() -> Box:
    return Box(lower=[-1.0], upper=[1.0])


class KernelSpec(BaseModel):
    """Integral kernel k(x, y) and the domains it is defined on."""

    model_config = ConfigDict(frozen=True)

    family: KernelFamily = KernelFamily.GAUSSIAN
    sigma: float = Field(default=0.2, gt=0)
    normalize: bool = False
    diffusivity: List[float] = Field(default_factory=lambda: [0.05, 0.05])
    velocity: List[float] = Field(default_factory=lambda: [0.0, 0.0])
    t_obs: float = Field(default=1.0, gt=0)
    obs_domain: Box = Field(default_factory=_unit_interval)
    source_domain: Box = Field(default_factory=_unit_interval)

    @model_validator(mode="after")
    def check_family(self) -> KernelSpec:
        if self.obs_domain.dim != self.source_domain.dim:
            raise ValueError("observation and source domains must have the same dimension")
        if self.family == KernelFamily.ADVECTION_DIFFUSION:
            if self.source_domain.dim != 2:
                raise ValueError("advection_diffusion kernel is defined in two dimensions")
            if len(self.diffusivity) != 2 or min(self.diffusivity) <= 0:
                raise ValueError("diffusivity must hold two positive values")
            if len(self.velocity) != 2:
                raise ValueError("velocity must be a 2-vector")
        return self


class AtomSpec(BaseModel):
    """One weighted Dirac in a config file."""

    weight: float
    position: List[float]

    @field_validator("position", mode="before")
    @classmethod
    def parse_position(cls, v: Any) -> Any:
        if isinstance(v, (int, float)):
            return [float(v)]
        return v

    @field_validator("weight")
    @classmethod
    def check_weight(cls, v: float) -> float:
        if v == 0:
            raise ValueError("atom weights must be nonzero")
        return v


class SensorConfig(BaseModel):
    """Sensor locations, normalized variances sigma0_sq and total precision p."""

    model_config = ConfigDict(frozen=True)

    x: List[List[float]]
    sigma0_sq: List[float]
    p: float = Field(default=1e4, gt=0)

    @model_validator(mode="before")
    @classmethod
    def expand_uniform(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            data["x"] = _as_point_list(data.get("x", []))
            if data.get("sigma0_sq", "uniform") == "uniform":
                n = len(data["x"])
                data["sigma0_sq"] = [float(n)] * n
        return data

    @model_validator(mode="after")
    def check_normalization(self) -> SensorConfig:
        if not self.x:
            raise ValueError("at least one sensor is required")
        if len({len(pt) for pt in self.x}) != 1:
            raise ValueError("all sensor locations must have the same dimension")
        if len(self.sigma0_sq) != len(self.x):
            raise ValueError("sigma0_sq must have one entry per sensor")
        if min(self.sigma0_sq) <= 0:
            raise ValueError("normalized variances must be positive")
        total = sum(1.0 / s for s in self.sigma0_sq)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"precisions 1/sigma0_sq must sum to 1 (got {total:.15g})")
        return self

    @classmethod
    def uniform(cls, n: int, box: Optional[Box] = None, p: float = 1e4) -> SensorConfig:
        """`n` equispaced sensors per axis on `box`, endpoints included, equal precision."""
        box = box or _unit_interval()
        points = box.grid(n) if n >= 2 else np.atleast_2d(
            0.5 * (np.asarray(box.lower) + np.asarray(box.upper))
        )
        return cls(x=points.tolist(), sigma0_sq="uniform", p=p)

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    @property
    def weights(self) -> np.ndarray:
        """Diagonal of the normalized precision matrix Sigma0^{-1}."""
        return 1.0 / np.asarray(self.sigma0_sq, dtype=float)

    @property
    def n_obs(self) -> int:
        return len(self.x)

    @property
    def dim(self) -> int:
        return len(self.x[0])

    def with_precision(self, p: float) -> SensorConfig:
        return SensorConfig(x=self.x, sigma0_sq=self.sigma0_sq, p=p)


class SensorSetSpec(BaseModel):
    """Named sensor layout inside an experiment config."""

    name: str
    uniform: Optional[int] = Field(default=None, ge=1)
    x: Optional[List[List[float]]] = None
    sigma0_sq: Union[str, List[float]] = "uniform"

    @field_validator("x", mode="before")
    @classmethod
    def parse_points(cls, v: Any) -> Any:
        return _as_point_list(v)

    @model_validator(mode="after")
    def check_layout(self) -> SensorSetSpec:
        if (self.uniform is None) == (self.x is None):
            raise ValueError(f"sensor set '{self.name}' needs exactly one of 'uniform' or 'x'")
        return self

    def build(self, domain: Box, p: float) -> SensorConfig:
        if self.uniform is not None:
            base = SensorConfig.uniform(self.uniform, domain, p)
            if self.sigma0_sq == "uniform":
                return base
            return SensorConfig(x=base.x, sigma0_sq=self.sigma0_sq, p=p)
        return SensorConfig(x=self.x, sigma0_sq=self.sigma0_sq, p=p)


class PdapConfig(BaseModel):
    """Primal-dual active point solver settings."""

    max_outer_iters: int = Field(default=200, ge=1)
    grid_resolution: int = Field(default=2048, ge=2)
    tol_cert: float = Field(default=1e-6, gt=0)
    coef_tol: float = Field(default=1e-12, gt=0)
    q_prune: float = Field(default=1e-10, gt=0)
    merge_radius: float = Field(default=1e-9, gt=0)
    point_moving: bool = True
    newton_steps: int = Field(default=20, ge=0)


class GnConfig(BaseModel):
    """Nonsmooth Gauss-Newton settings for the fixed-cardinality stationary point."""

    max_iters: int = Field(default=100, ge=1)
    damping: float = Field(default=1.0, gt=0, le=1)
    tol: float = Field(default=1e-10, gt=0)
    sign_guard: bool = True
    relinearize: bool = False
    q_floor: float = Field(default=1e-14, gt=0)
    max_halvings: int = Field(default=30, ge=0)


def _default_eps_schedule() -> List[float]:
    schedule = [1.0]
    while schedule[-1] > 1e-6:
        schedule.append(schedule[-1] * 0.5)
    return schedule


class HkSolveConfig(BaseModel):
    """Entropy-transport solver settings for the Hellinger-Kantorovich distance."""

    eps_schedule: List[float] = Field(default_factory=_default_eps_schedule)
    max_iters: int = Field(default=200, ge=1)
    tol: float = Field(default=1e-9, gt=0)
    polish_sweeps: int = Field(default=20000, ge=1)
    accept_gap: float = Field(default=1e-6, gt=0)

    @field_validator("eps_schedule")
    @classmethod
    def check_schedule(cls, v: List[float]) -> List[float]:
        if not v or min(v) <= 0:
            raise ValueError("entropic schedule must be non-empty and positive")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("entropic schedule must be strictly decreasing")
        if v[-1] > 1e-5:
            raise ValueError("final entropic regularization must be <= 1e-5")
        return v


class EstimatorToggles(BaseModel):
    """Which estimators a Monte-Carlo study evaluates."""

    pdap: bool = True
    gauss_newton: bool = True
    linearized: bool = True

    def enabled(self) -> List[Estimator]:
        flags = [
            (Estimator.PDAP, self.pdap),
            (Estimator.GAUSS_NEWTON, self.gauss_newton),
            (Estimator.LINEARIZED, self.linearized),
        ]
        return [name for name, on in flags if on]


class SolveReport(BaseModel):
    """Outcome of one solver call."""

    iterations: int = 0
    status: SolveStatus = SolveStatus.CONVERGED
    certificate_max: Optional[float] = None
    stationarity_residual: Optional[float] = None
    objective: Optional[float] = None
    objectives: List[float] = Field(default_factory=list)
    atom_counts: List[int] = Field(default_factory=list)
    wall_time: float = 0.0
    message: str = ""


class AdmissibilityReport(BaseModel):
    """Quantitative non-degeneracy check of a dual certificate."""

    admissible: bool
    theta_star: Optional[float] = None
    interpolation_residual: float
    gradient_residual: float
    hessian_margins: List[float] = Field(default_factory=list)
    global_margin: Optional[float] = None
    max_abs: float
    failure: Optional[str] = None


class DesignReport(BaseModel):
    """Fisher information and the closed-form design criterion psi."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    fisher: List[List[float]]
    inv_fisher_wnorm: float
    trace_term: float
    bias_term: float
    psi: float
    expected_mse: float
    condition_number: float
    beta0: float
    p: float
    n_obs: int
    identifiable: bool


class TheoryConstants(BaseModel):
    """Explicit constants of the worst-case MSE bound."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    theta: float
    beta0: float
    p: float
    n_obs: int
    C_k: float
    C_k1: float
    C_k2: float
    C_k3: float
    q_norm1: float
    inv_fisher_wnorm: float
    L_G: float
    L_Gprime: float
    r_dagger: float
    r_hat: float
    c1: float
    c2: float
    C1: float
    c3: float
    c3_dd: float
    c4: float
    C2: float
    C3: float
    C4: float
    p_bar: float
    bad_event_bound: float


class ExperimentConfig(BaseModel):
    """Declarative Monte-Carlo / reconstruction experiment."""

    name: str = "experiment"
    kernel: KernelSpec = Field(default_factory=KernelSpec)
    ground_truth: List[AtomSpec]
    sensor_sets: List[SensorSetSpec]
    studies: Optional[List[str]] = None
    beta0: List[float] = Field(default_factory=lambda: [2.0])
    p: List[float] = Field(default_factory=lambda: [1e4])
    samples: int = Field(default=100, ge=1)
    seed: int = Field(default=0, ge=0)
    estimators: EstimatorToggles = Field(default_factory=EstimatorToggles)
    output_dir: str = "results"
    theta: Optional[float] = Field(default=None, gt=0, le=1)
    bounds_resolution: int = Field(default=256, ge=2)
    certificate_resolution: int = Field(default=2048, ge=2)
    max_condition: float = Field(default=1e7, gt=1)
    pdap: PdapConfig = Field(default_factory=PdapConfig)
    gauss_newton: GnConfig = Field(default_factory=GnConfig)
    hk: HkSolveConfig = Field(default_factory=HkSolveConfig)

    @field_validator("beta0", "p")
    @classmethod
    def check_positive(cls, v: List[float]) -> List[float]:
        if not v or min(v) <= 0:
            raise ValueError("beta0 and p lists must be non-empty and positive")
        return v

    @model_validator(mode="after")
    def check_references(self) -> ExperimentConfig:
        names = [s.name for s in self.sensor_sets]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate sensor set names: {names}")
        for name in self.studies or []:
            if name not in names:
                raise ValueError(f"unknown sensor set '{name}' (known: {', '.join(names)})")
        domain = self.kernel.source_domain
        for atom in self.ground_truth:
            if len(atom.position) != domain.dim or not domain.contains(np.asarray(atom.position)):
                raise ValueError(f"ground-truth atom {atom.position} lies outside the source domain")
        return self

    def sensor_set(self, name: str) -> SensorSetSpec:
        for spec in self.sensor_sets:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def active_sensor_sets(self) -> List[SensorSetSpec]:
        if self.studies is None:
            return list(self.sensor_sets)
        return [self.sensor_set(name) for name in self.studies]


class SampleOutcome(BaseModel):
    """Per-sample diagnostics of a Monte-Carlo study."""

    index: int
    seed: int
    hk2: Dict[Estimator, float] = Field(default_factory=dict)
    status: Dict[Estimator, SolveStatus] = Field(default_factory=dict)
    pdap_atoms: Optional[int] = None
    hk_pdap_vs_gn: Optional[float] = None
    good_event: Optional[bool] = None


class ResultRecord(BaseModel):
    """Aggregated Monte-Carlo result for one (sensor set, beta0, p, estimator)."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    experiment: str
    sensor_set: str
    beta0: float
    p: float
    estimator: Estimator
    mean_hk2: float
    stderr: float
    expected_mse: float
    samples: int
    seed: int
    failures: int = 0
    admissible: Optional[bool] = None
    exact_support_fraction: Optional[float] = None
    good_event_fraction: Optional[float] = None


class BoundCheck(BaseModel):
    """Empirical MSE against 8 * expected_mse + bad_event_bound for one record."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    sensor_set: str
    beta0: float
    p: float
    estimator: Estimator
    empirical: float
    bound: float
    holds: bool
