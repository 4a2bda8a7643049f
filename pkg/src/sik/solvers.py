"""
Reconstruction algorithms.

- ``solve_blasso_pdap``: primal-dual active point method for the
  total-variation regularized problem over measures.
- ``stationary_gauss_newton``: sign-preserving Gauss-Newton iteration for the
  fixed-cardinality stationary point m_hat.
- ``linearized_estimate``: the exact linearized perturbation dm_hat.
"""

from __future__ import annotations

import logging
import time
from typing import Optional, Tuple, Union

import numpy as np

from sik.certificates import global_max_abs, regularized_certificate
from sik.design import SINGULAR_THRESHOLD, fisher_system, sign_vector
from sik.exceptions import SingularFisherError
from sik.forward import G_and_jacobian, Observation, apply_K, observation_data
from sik.kernels import KernelLike, as_kernel
from sik.measures import ParamVec, SparseMeasure, canonicalize, weighting_from
from sik.models import GnConfig, PdapConfig, SensorConfig, SolveReport, SolveStatus

logger = logging.getLogger(__name__)

SSN_MAX_ITERS = 100
FISTA_MAX_ITERS = 20000
MAX_HALVINGS = 30

Data = Union[Observation, np.ndarray]


def _soft(u: np.ndarray, thresh: float) -> np.ndarray:
    return np.sign(u) * np.maximum(np.abs(u) - thresh, 0.0)


def _kkt_residual(A: np.ndarray, b: np.ndarray, q: np.ndarray, beta: float) -> float:
    grad = A.T @ (A @ q - b)
    return float(np.max(np.abs(q - _soft(q - grad, beta)))) if q.size else 0.0


def _fista(A: np.ndarray, b: np.ndarray, beta: float, q0: np.ndarray, tol: float) -> np.ndarray:
    L = float(np.linalg.norm(A, 2) ** 2) or 1.0
    q, v, t = q0.copy(), q0.copy(), 1.0
    for _ in range(FISTA_MAX_ITERS):
        q_next = _soft(v - A.T @ (A @ v - b) / L, beta / L)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        v = q_next + (t - 1.0) / t_next * (q_next - q)
        q, t = q_next, t_next
        if _kkt_residual(A, b, q, beta) <= tol:
            return q
    logger.warning(
        "FISTA stopped after %d iterations with KKT residual %.3e > %.1e",
        FISTA_MAX_ITERS, _kkt_residual(A, b, q, beta), tol,
    )
    return q


def _l1_least_squares(
    A: np.ndarray, b: np.ndarray, beta: float, tol: float, init: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Global minimizer of 0.5 ||A q - b||^2 + beta ||q||_1.

    Semismooth Newton on the normal map F(u) = (u - P(u)) / tau + A^T (A P(u) - b),
    P the soft threshold at tau * beta, globalized by backtracking on ||F||.
    """
    n = A.shape[1]
    if n == 0:
        return np.zeros(0)
    AtA, Atb = A.T @ A, A.T @ b
    tau = 1.0 / (float(np.linalg.norm(AtA, 2)) or 1.0)
    q0 = np.zeros(n) if init is None else np.asarray(init, dtype=float)
    u = q0 - tau * (AtA @ q0 - Atb)

    def normal_map(u: np.ndarray) -> np.ndarray:
        q = _soft(u, tau * beta)
        return (u - q) / tau + AtA @ q - Atb

    F = normal_map(u)
    for _ in range(SSN_MAX_ITERS):
        q = _soft(u, tau * beta)
        if _kkt_residual(A, b, q, beta) <= tol:
            return q
        active = np.abs(u) > tau * beta
        d = np.zeros(n)
        if np.any(active):
            sub = AtA[np.ix_(active, active)]
            d[active] = np.linalg.lstsq(sub, -F[active], rcond=None)[0]
        d[~active] = -tau * (F[~active] + AtA[np.ix_(~active, active)] @ d[active])
        norm0, step = np.linalg.norm(F), 1.0
        for _ in range(MAX_HALVINGS):
            F_new = normal_map(u + step * d)
            if np.linalg.norm(F_new) < norm0:
                break
            step *= 0.5
        else:
            break
        u, F = u + step * d, F_new

    q = _soft(u, tau * beta)
    if _kkt_residual(A, b, q, beta) > tol:
        logger.debug("semismooth Newton stalled; falling back to FISTA")
        q = _fista(A, b, beta, q, tol)
    return q


def _weighted_system(
    k: KernelLike, sensors: SensorConfig, support: np.ndarray, z: Data
) -> Tuple[np.ndarray, np.ndarray]:
    root_w = np.sqrt(sensors.weights)
    return root_w[:, None] * as_kernel(k).values(sensors.points, support), root_w * observation_data(z)


def solve_coefficients(
    kernel: KernelLike,
    sensors: SensorConfig,
    support: np.ndarray,
    z: Data,
    beta: float,
    tol: float = 1e-12,
    init: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Optimal weights on fixed positions.

    Args:
        kernel: Kernel or kernel spec.
        sensors: Sensor configuration.
        support: Positions, shape (N, d).
        z: Data.
        beta: Regularization parameter.
        tol: KKT residual tolerance.
        init: Optional starting coefficients.

    Returns:
        Coefficients q minimizing 0.5 ||k[x, y] q - z||^2_{Sigma0^{-1}} + beta ||q||_1.
    """
    k = as_kernel(kernel)
    support = np.asarray(support, dtype=float).reshape(-1, k.dim)
    A, b = _weighted_system(k, sensors, support, z)
    return _l1_least_squares(A, b, beta, tol, init)


def stationarity_residual(
    kernel: KernelLike,
    sensors: SensorConfig,
    z: Data,
    beta: float,
    m: ParamVec,
    rho: Optional[np.ndarray] = None,
) -> np.ndarray:
    """S(m) = G'(m)^T Sigma0^{-1} (G(m) - z) + beta (rho; 0)."""
    G, J = G_and_jacobian(kernel, sensors, m)
    rho = np.sign(m.q) if rho is None else np.asarray(rho, dtype=float)
    shift = np.concatenate([rho, np.zeros_like(m.y)])
    return J.T @ (sensors.weights * (G - observation_data(z))) + beta * shift


def blasso_objective(
    kernel: KernelLike, sensors: SensorConfig, z: Data, beta: float, measure: SparseMeasure
) -> float:
    """0.5 ||K mu - z||^2_{Sigma0^{-1}} + beta ||mu||_M."""
    residual = apply_K(kernel, sensors, measure) - observation_data(z)
    return float(0.5 * np.sum(sensors.weights * residual**2) + beta * np.sum(np.abs(measure.weights)))


def _frozen_sign_objective(
    kernel: KernelLike, sensors: SensorConfig, z: np.ndarray, beta: float, m: ParamVec, rho: np.ndarray
) -> float:
    G, _ = G_and_jacobian(kernel, sensors, m)
    return float(0.5 * np.sum(sensors.weights * (G - z) ** 2) + beta * rho @ m.q)


def _move_points(
    kernel: KernelLike,
    sensors: SensorConfig,
    z: np.ndarray,
    beta: float,
    m: ParamVec,
    steps: int,
) -> ParamVec:
    """Damped Gauss-Newton steps on (q, y) with signs frozen and positions kept in the box."""
    k = as_kernel(kernel)
    domain = k.source_domain
    rho = np.sign(m.q)
    current = _frozen_sign_objective(k, sensors, z, beta, m, rho)
    for _ in range(steps):
        G, J = G_and_jacobian(k, sensors, m)
        grad = J.T @ (sensors.weights * (G - z)) + beta * np.concatenate([rho, np.zeros_like(m.y)])
        if np.linalg.norm(grad) <= 1e-14:
            break
        H = J.T @ (sensors.weights[:, None] * J)
        d = np.linalg.lstsq(H, -grad, rcond=None)[0]
        step, accepted = 1.0, False
        for _ in range(MAX_HALVINGS):
            values = m.as_array() + step * d
            cand = ParamVec.from_array(values, m.n_atoms, m.dim)
            cand = ParamVec(cand.q, domain.clip(cand.positions).reshape(-1), m.dim)
            if np.all(cand.q * rho > 0):
                value = _frozen_sign_objective(k, sensors, z, beta, cand, rho)
                if value < current:
                    m, current, accepted = cand, value, True
                    break
            step *= 0.5
        if not accepted:
            break
    return m


def _reduce_support(A: np.ndarray, q: np.ndarray, max_atoms: int) -> np.ndarray:
    """
    Move q along null directions of A until at most max_atoms weights are nonzero.

    Each step keeps A q fixed and does not increase ||q||_1.
    """
    q = q.copy()
    while np.count_nonzero(q) > max_atoms:
        active = np.flatnonzero(q)
        v = np.linalg.svd(A[:, active])[2][-1]
        s = np.sign(q[active])
        if s @ v > 0:
            v = -v
        shrinking = v * s < 0
        ratios = np.abs(q[active][shrinking] / v[shrinking])
        j = int(np.argmin(ratios))
        q[active] += ratios[j] * v
        q[active[np.flatnonzero(shrinking)[j]]] = 0.0
    return q


def _fit_on_support(
    kernel: KernelLike,
    sensors: SensorConfig,
    z: np.ndarray,
    beta: float,
    support: np.ndarray,
    init: np.ndarray,
    cfg: PdapConfig,
) -> SparseMeasure:
    """Fully corrective weights on `support`, pruned to at most N_o atoms."""
    k = as_kernel(kernel)
    A, b = _weighted_system(k, sensors, support, z)
    q = _l1_least_squares(A, b, beta, cfg.coef_tol, init)
    q = np.where(np.abs(q) > cfg.q_prune, q, 0.0)
    q = _reduce_support(A, q, sensors.n_obs)
    keep = q != 0.0
    return canonicalize(q[keep], support[keep], k.source_domain, cfg.merge_radius, cfg.q_prune)


def solve_blasso_pdap(
    kernel: KernelLike,
    sensors: SensorConfig,
    z: Data,
    beta: float,
    cfg: Optional[PdapConfig] = None,
) -> Tuple[SparseMeasure, SolveReport]:
    """
    Primal-dual active point method for min 0.5 ||K mu - z||^2_{Sigma0^{-1}} + beta ||mu||_M.

    Each outer iteration inserts the maximizer of |eta_bar|, re-solves all
    weights on the active set, optionally moves the points with a few
    sign-frozen Gauss-Newton steps, then prunes the support to at most N_o
    atoms. A point move that raises the objective is discarded. The loop
    stops once max |eta_bar| <= 1 + tol_cert and eta_bar interpolates the signs
    of the weights within tol_cert.

    Args:
        kernel: Kernel or kernel spec.
        sensors: Sensor configuration.
        z: Data.
        beta: Regularization parameter (> 0).
        cfg: Solver settings.

    Returns:
        Tuple (mu_bar, report). The objective never increases between outer
        iterations and mu_bar has at most N_o atoms.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    cfg = cfg or PdapConfig()
    k = as_kernel(kernel)
    domain = k.source_domain
    data = observation_data(z)
    start = time.perf_counter()

    measure = SparseMeasure.empty(k.dim, domain)
    objective = blasso_objective(k, sensors, data, beta, measure)
    objectives = [objective]
    counts = []
    status = SolveStatus.MAX_ITERS
    cert_max = None
    message = ""
    iteration = 0

    for iteration in range(1, cfg.max_outer_iters + 1):
        eta = regularized_certificate(k, sensors, measure, data, beta)
        y_star, cert_max = global_max_abs(eta, cfg.grid_resolution)
        interp = (
            float(np.max(np.abs(eta.values(measure.positions) - np.sign(measure.weights))))
            if measure.n_atoms
            else 0.0
        )
        counts.append(measure.n_atoms)
        logger.debug(
            "pdap iter %d: atoms=%d max|eta|=%.12f interp=%.2e obj=%.12e",
            iteration, measure.n_atoms, cert_max, interp, objective,
        )
        if cert_max <= 1.0 + cfg.tol_cert and interp <= cfg.tol_cert:
            status = SolveStatus.CONVERGED
            break

        support = measure.positions
        init = measure.weights
        near = bool(support.shape[0]) and bool(
            np.min(np.linalg.norm(support - y_star, axis=1)) <= cfg.merge_radius
        )
        if not near:
            support = np.vstack([support, y_star[None, :]])
            init = np.concatenate([init, [0.0]])
        candidate = _fit_on_support(k, sensors, data, beta, support, init, cfg)
        value = blasso_objective(k, sensors, data, beta, candidate)

        if cfg.point_moving and candidate.n_atoms:
            moved = _move_points(
                k,
                sensors,
                data,
                beta,
                ParamVec(candidate.weights, candidate.positions.reshape(-1), k.dim),
                cfg.newton_steps,
            )
            merged = canonicalize(moved.q, moved.positions, domain, cfg.merge_radius, cfg.q_prune)
            refit = _fit_on_support(k, sensors, data, beta, merged.positions, merged.weights, cfg)
            refit_value = blasso_objective(k, sensors, data, beta, refit)
            if refit_value <= value:
                candidate, value = refit, refit_value
            else:
                logger.debug("pdap point move rejected (objective +%.3e)", refit_value - value)

        if value > objective:
            message = f"stalled at iteration {iteration}: update raises the objective by {value - objective:.3e}"
            logger.warning("pdap %s", message)
            break
        measure, objective = candidate, value
        objectives.append(objective)

    report = SolveReport(
        iterations=iteration,
        status=status,
        certificate_max=cert_max,
        objective=objective,
        objectives=objectives,
        atom_counts=counts,
        wall_time=time.perf_counter() - start,
        message=message,
    )
    logger.info("pdap %s after %d iterations with %d atoms", status.value, iteration, measure.n_atoms)
    return measure, report


def _winv_norm(S: np.ndarray, diag: np.ndarray) -> float:
    return float(np.sqrt(np.sum(S**2 / diag)))


def stationary_gauss_newton(
    kernel: KernelLike,
    sensors: SensorConfig,
    z: Data,
    beta: float,
    m_init: ParamVec,
    cfg: Optional[GnConfig] = None,
) -> Tuple[ParamVec, SolveReport]:
    """
    Solve S(m) = 0 with signs frozen at sign(q_init).

    The update is m_{k+1} = m_k - t I0^{-1} S(m_k), with I0 evaluated at m_init
    (or at m_k when `cfg.relinearize`) and t halved until ||S||_{W^{-1}}
    decreases and no weight changes sign.

    Args:
        kernel: Kernel or kernel spec.
        sensors: Sensor configuration.
        z: Data.
        beta: Regularization parameter (>= 0).
        m_init: Starting parameters with nonzero weights.
        cfg: Solver settings.

    Returns:
        Tuple (m_hat, report).
    """
    cfg = cfg or GnConfig()
    k = as_kernel(kernel)
    domain = k.source_domain
    data = observation_data(z)
    start = time.perf_counter()
    rho = np.sign(m_init.q)
    diag = weighting_from(m_init.q, m_init.dim).diagonal

    def report(status: SolveStatus, iterations: int, residual: float, message: str = "") -> SolveReport:
        return SolveReport(
            iterations=iterations,
            status=status,
            stationarity_residual=residual,
            atom_counts=[m_init.n_atoms],
            wall_time=time.perf_counter() - start,
            message=message,
        )

    m = m_init
    residual = _winv_norm(stationarity_residual(k, sensors, data, beta, m, rho), diag)
    try:
        system = fisher_system(k, sensors, m_init)
        system.require_invertible(SINGULAR_THRESHOLD)
    except SingularFisherError as exc:
        return m, report(SolveStatus.SINGULAR, 0, residual, str(exc))

    for iteration in range(cfg.max_iters + 1):
        if residual <= cfg.tol:
            logger.debug("gauss-newton converged in %d iterations", iteration)
            return m, report(SolveStatus.CONVERGED, iteration, residual)
        if iteration == cfg.max_iters:
            break
        if cfg.relinearize and iteration > 0:
            try:
                system = fisher_system(k, sensors, m)
                system.require_invertible(SINGULAR_THRESHOLD)
            except SingularFisherError as exc:
                return m, report(SolveStatus.SINGULAR, iteration, residual, str(exc))

        S = stationarity_residual(k, sensors, data, beta, m, rho)
        direction = -cfg.damping * system.solve(S)
        step, accepted, flipped = 1.0, False, False
        for halving in range(cfg.max_halvings + 1):
            values = m.as_array() + step * direction
            cand = ParamVec.from_array(values, m.n_atoms, m.dim)
            cand = ParamVec(cand.q, domain.clip(cand.positions).reshape(-1), m.dim)
            if cfg.sign_guard and np.any(cand.q * rho < cfg.q_floor):
                flipped = flipped or halving == 0
                step *= 0.5
                continue
            cand_res = _winv_norm(stationarity_residual(k, sensors, data, beta, cand, rho), diag)
            if cand_res < residual:
                m, residual, accepted = cand, cand_res, True
                break
            step *= 0.5
        if not accepted:
            status = SolveStatus.SIGN_FLIP if flipped else SolveStatus.MAX_ITERS
            logger.info("gauss-newton stopped (%s) at residual %.3e", status.value, residual)
            return m, report(status, iteration, residual, "no acceptable step")

    return m, report(SolveStatus.MAX_ITERS, cfg.max_iters, residual)


def linearized_estimate(
    sensors: SensorConfig,
    kernel: KernelLike,
    m_ref: ParamVec,
    epsilon: np.ndarray,
    beta: float,
) -> ParamVec:
    """
    dm_hat = I0^{-1} (G'(m_ref)^T Sigma0^{-1} eps - beta (rho; 0)).

    Raises:
        SingularFisherError: If I0 is numerically singular.
    """
    system = fisher_system(kernel, sensors, m_ref)
    system.require_invertible(SINGULAR_THRESHOLD)
    _, J = G_and_jacobian(kernel, sensors, m_ref)
    eps = np.asarray(epsilon, dtype=float)
    dm = system.solve(J.T @ (sensors.weights * eps) - beta * sign_vector(m_ref))
    return ParamVec.from_array(dm, m_ref.n_atoms, m_ref.dim)
