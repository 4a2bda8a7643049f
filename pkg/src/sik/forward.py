"""
Sensors, the source-to-measurements operator K, the parameter-to-observation
map G(m) = k[x, y] q with its derivatives, and the Gaussian noise model.

Noise reproducibility: sample i of a study with master seed s draws its noise
from ``numpy.random.default_rng(sample_seed(s, i))`` where ``sample_seed`` takes
the first 64-bit word of ``SeedSequence(entropy=s, spawn_key=(i,))``. The
standard normals come from numpy's ziggurat sampler, so a given numpy version
reproduces every realization bit for bit on any machine, independent of the
order in which samples are evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from sik.exceptions import ConfigError
from sik.kernels import Kernel, KernelLike, as_kernel
from sik.measures import ParamVec, SparseMeasure
from sik.models import Box, SensorConfig


def uniform_sensors(n: int, box: Optional[Box] = None, p: float = 1e4) -> SensorConfig:
    """`n` equispaced sensors (both endpoints included) with Sigma0^{-1} = Id / N_o."""
    return SensorConfig.uniform(n, box, p)


@dataclass(frozen=True)
class Observation:
    """Measured data z; synthetic observations also carry their noise and seed."""

    z: np.ndarray
    epsilon: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float).reshape(-1)
        object.__setattr__(self, "z", z)
        if self.epsilon is not None:
            eps = np.asarray(self.epsilon, dtype=float).reshape(-1)
            if eps.shape != z.shape:
                raise ConfigError("noise realization and data have different lengths")
            object.__setattr__(self, "epsilon", eps)

    def check(self, sensors: SensorConfig) -> None:
        if self.z.shape[0] != sensors.n_obs:
            raise ConfigError(f"expected {sensors.n_obs} measurements, got {self.z.shape[0]}")


def observation_data(z: Union[Observation, np.ndarray]) -> np.ndarray:
    """Raw data vector of an observation or array."""
    return z.z if isinstance(z, Observation) else np.asarray(z, dtype=float).reshape(-1)


@dataclass(frozen=True)
class DualFunction:
    """eta(y) = sum_j c_j k(x_j, y), evaluated analytically with its gradient and Hessian."""

    coeff: np.ndarray
    kernel: Kernel
    sensors: SensorConfig

    def __post_init__(self) -> None:
        coeff = np.asarray(self.coeff, dtype=float).reshape(-1)
        if coeff.shape[0] != self.sensors.n_obs:
            raise ConfigError("dual function needs one coefficient per sensor")
        object.__setattr__(self, "coeff", coeff)

    @property
    def domain(self) -> Box:
        return self.kernel.source_domain

    @property
    def dim(self) -> int:
        return self.kernel.dim

    def _eval(self, y: np.ndarray, order: int) -> np.ndarray:
        pts = np.asarray(y, dtype=float).reshape(-1, self.dim)
        tensor = self.kernel.evaluate(self.sensors.points, pts, order)
        return np.tensordot(self.coeff, tensor, axes=(0, 0))

    def values(self, y: np.ndarray) -> np.ndarray:
        """eta at points of shape (M, d), returned with shape (M,)."""
        return self._eval(y, 0)

    def gradient(self, y: np.ndarray) -> np.ndarray:
        return self._eval(y, 1)

    def hessian(self, y: np.ndarray) -> np.ndarray:
        return self._eval(y, 2)

    def __call__(self, y: np.ndarray) -> float:
        return float(self.values(y)[0])

    def scaled(self, factor: float) -> DualFunction:
        return DualFunction(self.coeff * factor, self.kernel, self.sensors)


def apply_K(kernel: KernelLike, sensors: SensorConfig, measure: SparseMeasure) -> np.ndarray:
    """(K mu)_j = sum_n q_n k(x_j, y_n)."""
    if measure.n_atoms == 0:
        return np.zeros(sensors.n_obs)
    k = as_kernel(kernel)
    return k.values(sensors.points, measure.positions) @ measure.weights


def apply_K_adjoint(kernel: KernelLike, sensors: SensorConfig, z: np.ndarray) -> DualFunction:
    """The continuous function K* z = sum_j z_j k(x_j, .)."""
    return DualFunction(np.asarray(z, dtype=float), as_kernel(kernel), sensors)


def G_and_jacobian(
    kernel: KernelLike, sensors: SensorConfig, m: ParamVec
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Evaluate G(m) = k[x, y] q and its Jacobian.

    Args:
        kernel: Kernel or kernel spec.
        sensors: Sensor configuration.
        m: Parameters (q; y).

    Returns:
        Tuple (G, J) with J of shape (N_o, (1 + d) N): the first N columns are
        k(x_i, y_n), the remaining ones q_n grad_y k(x_i, y_n) stacked per atom.
    """
    k = as_kernel(kernel)
    n_obs, n = sensors.n_obs, m.n_atoms
    if n == 0:
        return np.zeros(n_obs), np.zeros((n_obs, 0))
    vals, grads = k.derivatives(sensors.points, m.positions, 1)
    G = vals @ m.q
    J = np.empty((n_obs, (1 + m.dim) * n))
    J[:, :n] = vals
    J[:, n:] = (grads * m.q[None, :, None]).reshape(n_obs, n * m.dim)
    return G, J


def G_second_apply(
    kernel: KernelLike, sensors: SensorConfig, m: ParamVec, dm: ParamVec, tm: ParamVec
) -> np.ndarray:
    """Second directional derivative G''(m)(dm, tm)."""
    k = as_kernel(kernel)
    if m.n_atoms == 0:
        return np.zeros(sensors.n_obs)
    _, grads, hess = k.derivatives(sensors.points, m.positions, 2)
    dy, ty = dm.positions, tm.positions
    cross = np.einsum("jnd,nd->jn", grads, ty) @ dm.q + np.einsum("jnd,nd->jn", grads, dy) @ tm.q
    curvature = np.einsum("jnab,na,nb->jn", hess, dy, ty) @ m.q
    return cross + curvature


def misfit_norm(v: np.ndarray, sensors: SensorConfig) -> float:
    """||v||_{Sigma0^{-1}} = sqrt(sum_j v_j^2 / sigma0_j^2)."""
    v = np.asarray(v, dtype=float).reshape(-1)
    return float(np.sqrt(np.sum(sensors.weights * v**2)))


def sample_seed(master_seed: int, index: int) -> int:
    """64-bit seed of Monte-Carlo sample `index`, independent of evaluation order."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(seq.generate_state(2, np.uint64)[0])


def sample_noise(sensors: SensorConfig, seed: int) -> np.ndarray:
    """Noise with independent components eps_j ~ N(0, sigma0_j^2 / p)."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal(sensors.n_obs) * np.sqrt(np.asarray(sensors.sigma0_sq) / sensors.p)


def synthesize(
    kernel: KernelLike,
    sensors: SensorConfig,
    measure: SparseMeasure,
    seed: Optional[int] = None,
) -> Observation:
    """z = K mu + eps; exact data when `seed` is None."""
    clean = apply_K(kernel, sensors, measure)
    if seed is None:
        return Observation(clean, np.zeros_like(clean), None)
    eps = sample_noise(sensors, seed)
    return Observation(clean + eps, eps, seed)
