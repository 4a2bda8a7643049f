"""
Smooth integral kernels with analytic y-derivatives up to order three.

Both supported families are anisotropic Gaussians

    k(x, y) = A * exp(-0.5 * u^T M u),    u = x - y - s,

so one implementation serves them: the Gaussian kernel uses M = I / sigma^2 and
s = 0, the advection-diffusion Green's function uses M = D^{-1} / (2 T) and
s = kappa * T.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Union

import numpy as np

from sik.exceptions import ConfigError
from sik.models import Box, KernelFamily, KernelSpec

logger = logging.getLogger(__name__)

MAX_ORDER = 3
POWER_ITERATIONS = 50
POWER_TOL = 1e-10


class Kernel:
    """
    Batched kernel evaluation.

    `derivatives(x, y, order)` evaluates all sensor/source pairs at once:
    x has shape (P, d), y has shape (M, d), and the r-th returned array has
    shape (P, M) + (d,) * r.
    """

    def __init__(self, spec: KernelSpec):
        self.spec = spec

    @property
    def dim(self) -> int:
        return self.spec.source_domain.dim

    @property
    def source_domain(self) -> Box:
        return self.spec.source_domain

    @property
    def obs_domain(self) -> Box:
        return self.spec.obs_domain

    def derivatives(self, x: np.ndarray, y: np.ndarray, order: int) -> List[np.ndarray]:
        raise NotImplementedError

    def _points(self, pts: np.ndarray) -> np.ndarray:
        arr = np.asarray(pts, dtype=float)
        if arr.ndim <= 1:
            arr = arr.reshape(-1, self.dim)
        return arr

    def evaluate(self, x: np.ndarray, y: np.ndarray, order: int = 0) -> np.ndarray:
        if order not in range(MAX_ORDER + 1):
            raise ConfigError(f"unsupported derivative order {order} (expected 0..{MAX_ORDER})")
        return self.derivatives(self._points(x), self._points(y), order)[order]

    def values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.evaluate(x, y, 0)

    def gradients(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.evaluate(x, y, 1)

    def hessians(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.evaluate(x, y, 2)


class AnisotropicGaussianKernel(Kernel):
    """k(x, y) = A exp(-0.5 (x - y - s)^T M (x - y - s))."""

    def __init__(self, spec: KernelSpec, amplitude: float, precision: np.ndarray, shift: np.ndarray):
        super().__init__(spec)
        self.amplitude = float(amplitude)
        self.precision = np.asarray(precision, dtype=float)
        self.shift = np.asarray(shift, dtype=float)

    def derivatives(self, x: np.ndarray, y: np.ndarray, order: int) -> List[np.ndarray]:
        M = self.precision
        u = x[:, None, :] - y[None, :, :] - self.shift
        Mu = u @ M
        k = self.amplitude * np.exp(-0.5 * np.sum(u * Mu, axis=-1))
        out = [k]
        if order >= 1:
            out.append(k[..., None] * Mu)
        if order >= 2:
            outer = Mu[..., :, None] * Mu[..., None, :]
            out.append(k[..., None, None] * (outer - M))
        if order >= 3:
            cube = Mu[..., :, None, None] * Mu[..., None, :, None] * Mu[..., None, None, :]
            sym = (
                M[:, :, None] * Mu[..., None, None, :]
                + M[:, None, :] * Mu[..., None, :, None]
                + M[None, :, :] * Mu[..., :, None, None]
            )
            out.append(k[..., None, None, None] * (cube - sym))
        return out


def make_kernel(spec: KernelSpec) -> Kernel:
    """Build the batched kernel described by `spec`."""
    d = spec.source_domain.dim
    if spec.family == KernelFamily.GAUSSIAN:
        amplitude = (2.0 * np.pi * spec.sigma**2) ** (-d / 2.0) if spec.normalize else 1.0
        return AnisotropicGaussianKernel(spec, amplitude, np.eye(d) / spec.sigma**2, np.zeros(d))
    D = np.asarray(spec.diffusivity, dtype=float)
    T = spec.t_obs
    amplitude = 1.0 / (4.0 * np.pi * T * np.sqrt(D[0] * D[1]))
    precision = np.diag(1.0 / (2.0 * T * D))
    shift = np.asarray(spec.velocity, dtype=float) * T
    return AnisotropicGaussianKernel(spec, amplitude, precision, shift)


KernelLike = Union[Kernel, KernelSpec]


def as_kernel(kernel: KernelLike) -> Kernel:
    return kernel if isinstance(kernel, Kernel) else make_kernel(kernel)


def eval_kernel(kernel: KernelLike, x: np.ndarray, y: np.ndarray, order: int = 0) -> np.ndarray:
    """
    Evaluate k or one of its y-derivative tensors at a single pair (x, y).

    Args:
        kernel: Kernel or kernel spec.
        x: Observation point.
        y: Source point.
        order: 0 for k, 1 for the gradient, 2 for the Hessian, 3 for the third derivative.

    Returns:
        Tensor of rank `order` (a float for order 0).
    """
    k = as_kernel(kernel)
    value = k.evaluate(np.atleast_1d(x).reshape(1, -1), np.atleast_1d(y).reshape(1, -1), order)
    value = value[0, 0]
    return float(value) if order == 0 else value


@dataclass(frozen=True)
class KernelBounds:
    """Sup norms of k and its y-derivatives over a grid of Omega_o x Omega_s."""

    C_k: float
    C_k1: float
    C_k2: float
    C_k3: float


def _hessian_norms(H: np.ndarray) -> np.ndarray:
    if H.shape[-1] == 1:
        return np.abs(H[..., 0, 0])
    return np.max(np.abs(np.linalg.eigvalsh(H)), axis=-1)


def _tensor3_norms(T: np.ndarray) -> np.ndarray:
    """Spectral norms of symmetric 3-tensors, batched over leading axes."""
    d = T.shape[-1]
    if d == 1:
        return np.abs(T[..., 0, 0, 0])
    flat = T.reshape(-1, d, d, d)
    starts = list(np.eye(d)) + [np.ones(d) / np.sqrt(d)]
    best = np.zeros(flat.shape[0])
    for v0 in starts:
        v = np.tile(v0, (flat.shape[0], 1))
        value = np.zeros(flat.shape[0])
        for _ in range(POWER_ITERATIONS):
            tv = np.einsum("bijk,bj,bk->bi", flat, v, v)
            norm = np.linalg.norm(tv, axis=1)
            converged = np.abs(norm - value) <= POWER_TOL * np.maximum(norm, 1.0)
            value = norm
            safe = norm > 0
            v = np.where(safe[:, None], tv / np.where(safe, norm, 1.0)[:, None], v)
            if np.all(converged):
                break
        best = np.maximum(best, value)
    return best.reshape(T.shape[:-3])


def kernel_bounds(kernel: KernelLike, grid_resolution: int = 256, chunk_size: int = 4096) -> KernelBounds:
    """
    Estimate C_k, C_k', C_k'', C_k''' as maxima over tensor grids of both domains.

    Args:
        kernel: Kernel or kernel spec.
        grid_resolution: Points per axis on each domain (endpoints included).
        chunk_size: Number of observation points evaluated per batch.

    Returns:
        KernelBounds with the four grid maxima.
    """
    k = as_kernel(kernel)
    xs = k.obs_domain.grid(grid_resolution)
    ys = k.source_domain.grid(grid_resolution)
    bounds = np.zeros(4)
    step = max(1, chunk_size // ys.shape[0])
    for start in range(0, xs.shape[0], step):
        vals = k.derivatives(xs[start : start + step], ys, MAX_ORDER)
        bounds[0] = max(bounds[0], float(np.max(np.abs(vals[0]))))
        bounds[1] = max(bounds[1], float(np.max(np.linalg.norm(vals[1], axis=-1))))
        bounds[2] = max(bounds[2], float(np.max(_hessian_norms(vals[2]))))
        bounds[3] = max(bounds[3], float(np.max(_tensor3_norms(vals[3]))))
    logger.debug("kernel bounds on %d x %d grid: %s", xs.shape[0], ys.shape[0], bounds)
    return KernelBounds(*(float(b) for b in bounds))
