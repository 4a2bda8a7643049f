"""
Dual certificates: the vanishing-derivative pre-certificate, the certificate of
the regularized problem, global extremum search and theta-admissibility.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from sik.design import SINGULAR_THRESHOLD, fisher_system, sign_vector
from sik.forward import (
    DualFunction,
    G_and_jacobian,
    Observation,
    apply_K,
    apply_K_adjoint,
    observation_data,
)
from sik.kernels import KernelLike
from sik.measures import ParamVec, SparseMeasure
from sik.models import AdmissibilityReport, SensorConfig

logger = logging.getLogger(__name__)

GRID_RESOLUTION = 2048
NEWTON_STEPS = 20
NEWTON_TOL = 1e-12
TOL_INTERP = 1e-6
EXCLUSION_RADIUS = 1e-3
CHUNK = 65536

__all__ = [
    "DualFunction",
    "CertificateCheck",
    "pre_certificate",
    "noisy_pre_certificate",
    "regularized_certificate",
    "check_certificate",
    "global_max_abs",
    "certificate_curve",
    "theta_admissibility",
]


def pre_certificate(kernel: KernelLike, sensors: SensorConfig, m: ParamVec) -> DualFunction:
    """
    Vanishing-derivative pre-certificate eta_PC = K* Sigma0^{-1} G'(m) I0^{-1} (rho; 0).

    It interpolates sign(q_n) with zero gradient at every atom and does not
    depend on the total precision p.

    Raises:
        SingularFisherError: If I0 is numerically singular.
    """
    system = fisher_system(kernel, sensors, m)
    system.require_invertible(SINGULAR_THRESHOLD)
    _, J = G_and_jacobian(kernel, sensors, m)
    coeff = sensors.weights * (J @ system.solve(sign_vector(m)))
    return apply_K_adjoint(kernel, sensors, coeff)


def noisy_pre_certificate(
    kernel: KernelLike,
    sensors: SensorConfig,
    m: ParamVec,
    epsilon: np.ndarray,
    beta: float,
) -> DualFunction:
    """eta_PC,eps = beta^{-1} K* Sigma0^{-1} (eps - G'(m) dm_hat), dm_hat the linearized estimate."""
    system = fisher_system(kernel, sensors, m)
    system.require_invertible(SINGULAR_THRESHOLD)
    _, J = G_and_jacobian(kernel, sensors, m)
    eps = np.asarray(epsilon, dtype=float)
    dm = system.solve(J.T @ (sensors.weights * eps) - beta * sign_vector(m))
    return apply_K_adjoint(kernel, sensors, sensors.weights * (eps - J @ dm) / beta)


def regularized_certificate(
    kernel: KernelLike,
    sensors: SensorConfig,
    measure: SparseMeasure,
    z: Union[Observation, np.ndarray],
    beta: float,
) -> DualFunction:
    """eta_bar = -K* Sigma0^{-1} (K mu - z) / beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    residual = observation_data(z) - apply_K(kernel, sensors, measure)
    return apply_K_adjoint(kernel, sensors, sensors.weights * residual / beta)


def _grid_values(eta: DualFunction, points: np.ndarray) -> np.ndarray:
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], CHUNK):
        out[start : start + CHUNK] = eta.values(points[start : start + CHUNK])
    return out


def global_max_abs(
    eta: DualFunction,
    grid_resolution: int = GRID_RESOLUTION,
    newton_steps: int = NEWTON_STEPS,
    step_tol: float = NEWTON_TOL,
) -> Tuple[np.ndarray, float]:
    """
    Locate max |eta| over the source domain.

    The best grid point is refined by Newton steps on grad eta = 0. A step that
    leaves the box is clamped; steps that do not increase |eta| are rejected,
    so the returned value is never below the grid maximum.

    Args:
        eta: Dual function.
        grid_resolution: Grid points per axis.
        newton_steps: Maximum Newton refinements.
        step_tol: Stop once a step is shorter than this.

    Returns:
        Tuple (y_star, value).
    """
    domain = eta.domain
    grid = domain.grid(grid_resolution)
    vals = np.abs(_grid_values(eta, grid))
    idx = int(np.argmax(vals))
    y, best = grid[idx].copy(), float(vals[idx])
    if best == 0.0:
        return y, 0.0

    for _ in range(newton_steps):
        g = eta.gradient(y)[0]
        H = eta.hessian(y)[0]
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        candidate = domain.clip(y - step)
        value = abs(eta(candidate))
        if value < best:
            break
        moved = float(np.linalg.norm(candidate - y))
        y, best = candidate, value
        if moved < step_tol:
            break
    return y, best


def certificate_curve(eta: DualFunction, resolution: int = GRID_RESOLUTION) -> Tuple[np.ndarray, np.ndarray]:
    """Sampled (y, eta(y)) on the source-domain grid."""
    grid = eta.domain.grid(resolution)
    return grid, _grid_values(eta, grid)


@dataclass(frozen=True)
class CertificateCheck:
    """Post-hoc optimality check of a regularized solution."""

    max_abs: float
    interpolation_residual: float
    y_star: np.ndarray

    def passed(self, tol: float) -> bool:
        return self.max_abs <= 1.0 + tol and self.interpolation_residual <= tol


def check_certificate(
    eta: DualFunction, measure: SparseMeasure, grid_resolution: int = GRID_RESOLUTION
) -> CertificateCheck:
    """Evaluate max |eta| and max_n |eta(y_n) - sign(q_n)|."""
    y_star, value = global_max_abs(eta, grid_resolution)
    if measure.n_atoms:
        residual = float(np.max(np.abs(eta.values(measure.positions) - np.sign(measure.weights))))
    else:
        residual = 0.0
    return CertificateCheck(value, residual, y_star)


def theta_admissibility(
    eta: DualFunction,
    measure: SparseMeasure,
    grid_resolution: int = GRID_RESOLUTION,
    tol_interp: float = TOL_INTERP,
    exclusion_radius: float = EXCLUSION_RADIUS,
) -> AdmissibilityReport:
    """
    Largest theta in (0, 1] for which eta is theta-admissible on the grid.

    Per grid point with g = 1 - |eta(y)| and s = min_n ||w_n (y - y_n)||^2 the
    feasible maximum is sqrt(g) when sqrt(g) <= s and g / s otherwise. Points
    within `exclusion_radius` (w-scaled) of an atom are left to the curvature
    condition, whose cap per atom is lambda_min(-sign(q_n) Hess eta(y_n)) / (2 w_n^2).
    """
    signs = np.sign(measure.weights)
    w2 = np.abs(measure.weights)
    atoms = measure.positions

    if measure.n_atoms:
        interp = float(np.max(np.abs(eta.values(atoms) - signs)))
        grad_res = float(np.max(np.linalg.norm(eta.gradient(atoms), axis=-1)))
        curvature = -signs[:, None, None] * eta.hessian(atoms)
        lam_min = np.linalg.eigvalsh(curvature)[:, 0]
        caps = np.clip(lam_min / (2.0 * w2), 0.0, 1.0)
    else:
        interp = grad_res = 0.0
        lam_min = caps = np.zeros(0)

    grid = eta.domain.grid(grid_resolution)
    values = _grid_values(eta, grid)
    g = 1.0 - np.abs(values)
    if measure.n_atoms:
        diff = grid[:, None, :] - atoms[None, :, :]
        s = np.min(w2[None, :] * np.sum(diff**2, axis=-1), axis=1)
    else:
        s = np.full(grid.shape[0], np.inf)
    outside = np.sqrt(s) >= exclusion_radius
    max_abs = float(np.max(np.abs(values)))
    if measure.n_atoms:
        max_abs = max(max_abs, float(np.max(np.abs(eta.values(atoms)))))

    failure = None
    theta_star = None
    if interp > tol_interp or grad_res > tol_interp:
        failure = "interpolation residual exceeds tolerance"
    elif np.any(g[outside] < 0):
        failure = "global bound violated"
    else:
        gs, ss = g[outside], s[outside]
        root = np.sqrt(gs)
        with np.errstate(divide="ignore", invalid="ignore"):
            per_point = np.where(root <= ss, root, gs / ss)
        candidates = [1.0]
        if per_point.size:
            candidates.append(float(np.min(per_point)))
        if caps.size:
            candidates.append(float(np.min(caps)))
        theta_star = min(candidates)
        if theta_star <= 0:
            failure = "degenerate curvature"
            theta_star = None

    theta_eval = theta_star or 0.0
    margin_terms = g[outside] - theta_eval * np.minimum(theta_eval, s[outside])
    global_margin = float(np.min(margin_terms)) if margin_terms.size else None
    report = AdmissibilityReport(
        admissible=failure is None,
        theta_star=theta_star,
        interpolation_residual=interp,
        gradient_residual=grad_res,
        hessian_margins=(lam_min - 2.0 * theta_eval * w2).tolist(),
        global_margin=global_margin,
        max_abs=max_abs,
        failure=failure,
    )
    logger.info(
        "admissibility: theta_star=%s max|eta|=%.6f failure=%s", theta_star, max_abs, failure
    )
    return report
