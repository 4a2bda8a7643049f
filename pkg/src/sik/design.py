"""
Fisher information, the closed-form design criterion psi and the explicit
constants of the worst-case MSE bound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.special import factorial2

from sik.exceptions import ConfigError, SingularFisherError
from sik.forward import G_and_jacobian
from sik.kernels import KernelBounds, KernelLike, as_kernel, kernel_bounds
from sik.measures import ParamVec, Weighting, weighting_from
from sik.models import DesignReport, SensorConfig, TheoryConstants

logger = logging.getLogger(__name__)

# Rank decisions for linear solves in double precision.
SINGULAR_THRESHOLD = 1e12
# Default identifiability threshold of the design criterion.
MAX_CONDITION = 1e7


class FisherSystem:
    """
    Fisher information I0 together with the eigendecomposition of its
    W-scaled form W^{-1/2} I0 W^{-1/2}.

    Working in the scaled form keeps every quantity the error analysis needs
    (trace, weighted operator norm, solves) well conditioned even when the
    position block of I0 is orders of magnitude larger than the weight block.
    """

    def __init__(self, fisher: np.ndarray, weighting: Weighting):
        fisher = np.asarray(fisher, dtype=float)
        self.fisher = 0.5 * (fisher + fisher.T)
        self.weighting = weighting
        self._sqrt_w = np.sqrt(weighting.diagonal)
        scaled = self.fisher / np.outer(self._sqrt_w, self._sqrt_w)
        self.eigvals, self.eigvecs = scipy.linalg.eigh(scaled)

    @property
    def condition_number(self) -> float:
        if self.eigvals.size == 0:
            return 1.0
        lam_min, lam_max = float(self.eigvals[0]), float(self.eigvals[-1])
        if lam_min <= 0 or lam_max <= 0:
            return math.inf
        return lam_max / lam_min

    def require_invertible(self, threshold: float = SINGULAR_THRESHOLD) -> None:
        cond = self.condition_number
        if not cond <= threshold:
            logger.warning("Fisher information is singular (condition number %.3e)", cond)
            raise SingularFisherError(cond)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """I0^{-1} rhs."""
        scaled = (self.eigvecs.T @ (np.asarray(rhs, dtype=float) / self._sqrt_w)) / self.eigvals
        return (self.eigvecs @ scaled) / self._sqrt_w

    @property
    def trace_w_inv(self) -> float:
        """tr(W I0^{-1})."""
        return float(np.sum(1.0 / self.eigvals))

    @property
    def inv_wnorm(self) -> float:
        """||W^{1/2} I0^{-1} W^{1/2}||_2."""
        return float(1.0 / self.eigvals[0])

    def wnorm_sq(self, v: np.ndarray) -> float:
        return float(np.sum(self.weighting.diagonal * np.asarray(v) ** 2))


def sign_vector(m: ParamVec) -> np.ndarray:
    """(rho; 0) with rho = sign(q)."""
    return np.concatenate([np.sign(m.q), np.zeros_like(m.y)])


def fisher_info(kernel: KernelLike, sensors: SensorConfig, m: ParamVec) -> np.ndarray:
    """I0 = G'(m)^T Sigma0^{-1} G'(m)."""
    _, J = G_and_jacobian(kernel, sensors, m)
    return J.T @ (sensors.weights[:, None] * J)


def fisher_system(kernel: KernelLike, sensors: SensorConfig, m: ParamVec) -> FisherSystem:
    return FisherSystem(fisher_info(kernel, sensors, m), weighting_from(m.q, m.dim))


def weighted_opnorm_inv_fisher(fisher: np.ndarray, weighting: Weighting) -> float:
    """
    Spectral norm of W^{1/2} I0^{-1} W^{1/2}.

    Raises:
        SingularFisherError: If I0 is numerically singular.
    """
    system = FisherSystem(fisher, weighting)
    system.require_invertible()
    return system.inv_wnorm


def design_criterion(
    kernel: KernelLike,
    sensors: SensorConfig,
    m: ParamVec,
    beta0: float,
    max_condition: float = MAX_CONDITION,
) -> DesignReport:
    """
    Closed-form criterion psi = tr(W I0^{-1}) + beta0^2 ||I0^{-1}(rho; 0)||_W^2.

    psi / p is the exact expectation of ||dm_hat||_W^2 under eps ~ N(0, Sigma0 / p)
    with beta = beta0 / sqrt(p). Designs whose W-scaled Fisher information has a
    condition number above `max_condition` are reported as not identifiable with
    psi = +inf.

    Args:
        kernel: Kernel or kernel spec.
        sensors: Sensor configuration (its `p` sets the expected MSE).
        m: Reference parameters (q; y).
        beta0: Regularization constant of the rule beta = beta0 / sqrt(p).
        max_condition: Identifiability threshold.

    Returns:
        DesignReport.
    """
    system = fisher_system(kernel, sensors, m)
    cond = system.condition_number
    base = dict(
        fisher=system.fisher.tolist(),
        condition_number=cond,
        beta0=beta0,
        p=sensors.p,
        n_obs=sensors.n_obs,
    )
    if not cond <= max_condition:
        logger.warning(
            "design with %d sensors is not identifiable (condition number %.3e)",
            sensors.n_obs,
            cond,
        )
        return DesignReport(
            **base,
            inv_fisher_wnorm=math.inf,
            trace_term=math.inf,
            bias_term=math.inf,
            psi=math.inf,
            expected_mse=math.inf,
            identifiable=False,
        )
    trace_term = system.trace_w_inv
    bias_term = system.wnorm_sq(system.solve(sign_vector(m)))
    psi = trace_term + beta0**2 * bias_term
    logger.info("psi=%.9e (trace %.6e, bias %.6e)", psi, trace_term, bias_term)
    return DesignReport(
        **base,
        inv_fisher_wnorm=system.inv_wnorm,
        trace_term=trace_term,
        bias_term=bias_term,
        psi=psi,
        expected_mse=psi / sensors.p,
        identifiable=True,
    )


def theory_constants(
    kernel: KernelLike,
    sensors: SensorConfig,
    m: ParamVec,
    theta: float,
    beta0: float,
    p: Optional[float] = None,
    grid_resolution: int = 256,
    bounds: Optional[KernelBounds] = None,
) -> TheoryConstants:
    """
    Explicit constants of the worst-case MSE bound at reference parameters m.

    Args:
        kernel: Kernel or kernel spec.
        sensors: Sensor configuration.
        m: Reference parameters (q; y).
        theta: Admissibility constant in (0, 1].
        beta0: Regularization constant.
        p: Total precision; defaults to `sensors.p`.
        grid_resolution: Grid used for the kernel sup norms.
        bounds: Precomputed kernel bounds (skips the grid scan).

    Returns:
        TheoryConstants.
    """
    if not 0 < theta <= 1:
        raise ConfigError(f"theta must lie in (0, 1], got {theta}")
    k = as_kernel(kernel)
    p = sensors.p if p is None else p
    bounds = bounds or kernel_bounds(k, grid_resolution)
    system = fisher_system(k, sensors, m)
    system.require_invertible()
    inv = system.inv_wnorm

    n_obs = sensors.n_obs
    q_norm1 = float(np.sum(np.abs(m.q)))
    w = np.sqrt(np.abs(m.q))
    domain = k.source_domain
    r_dagger = float(
        min(min(wn / 8.0, wn * domain.boundary_distance(yn) / 2.0) for wn, yn in zip(w, m.positions))
    )

    L_G = 4.0 * (2.0 * bounds.C_k + bounds.C_k1) * math.sqrt(q_norm1)
    L_Gp = 2.0 * (4.0 * bounds.C_k1 + bounds.C_k2)
    c1 = inv * (L_G + math.sqrt(q_norm1))
    c2 = L_Gp * inv * (6.0 * L_G * c1 + 1.0)
    C1 = max(c1, 4.0 * c1 / r_dagger, 2.0 * c2)
    growth = (L_G + L_Gp) * C1**2 + 1.0
    c3 = bounds.C_k * growth
    c3_dd = bounds.C_k2 * growth
    c4 = float(np.max(1.0 / w)) * bounds.C_k3 * L_G * math.sqrt(q_norm1) * inv * C1
    C2 = max(c3, (c3_dd + c4) * float(np.max(1.0 / w**2)))
    C4 = max(C1, C2)
    C3 = 2.0 * q_norm1 + math.sqrt(2.0 * n_obs) / (2.0 * beta0 * math.sqrt(p))
    t = theta**2 / (64.0 * C4)
    bad_event_bound = C3 * math.exp(-((t * beta0) ** 2) / (2.0 * n_obs))
    p_bar = beta0**2 * (t + 1.0) ** 4 / t**2
    r_hat = min(c1 / c2, r_dagger / 2.0) if c2 > 0 else r_dagger

    return TheoryConstants(
        theta=theta,
        beta0=beta0,
        p=p,
        n_obs=n_obs,
        C_k=bounds.C_k,
        C_k1=bounds.C_k1,
        C_k2=bounds.C_k2,
        C_k3=bounds.C_k3,
        q_norm1=q_norm1,
        inv_fisher_wnorm=inv,
        L_G=L_G,
        L_Gprime=L_Gp,
        r_dagger=r_dagger,
        r_hat=r_hat,
        c1=c1,
        c2=c2,
        C1=C1,
        c3=c3,
        c3_dd=c3_dd,
        c4=c4,
        C2=C2,
        C3=C3,
        C4=C4,
        p_bar=p_bar,
        bad_event_bound=bad_event_bound,
    )


def gaussian_tail(alpha: float, n_obs: int) -> float:
    """Tail bound P(||eps0||_2 > alpha) <= 2 exp(-alpha^2 / (2 N_o)) for eps0 ~ N(0, Id)."""
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    return 2.0 * math.exp(-(alpha**2) / (2.0 * n_obs))


def gaussian_tail_moment(alpha: float, n_obs: int, l: int) -> float:
    """Bound sqrt(2 N_o (2l - 1)!!) exp(-alpha^2 / (4 N_o)) on E[||eps0||^l ; ||eps0|| > alpha]."""
    if l < 1:
        raise ConfigError("moment order must be >= 1")
    double_fact = float(factorial2(2 * l - 1, exact=True))
    return math.sqrt(2.0 * n_obs * double_fact) * math.exp(-(alpha**2) / (4.0 * n_obs))


def contraction_factor(constants: TheoryConstants, r: float, eps_norm: float) -> float:
    """kappa(r) = L_G' ||I0^{-1}|| (3 L_G r + ||eps||_{Sigma0^{-1}})."""
    return constants.L_Gprime * constants.inv_fisher_wnorm * (3.0 * constants.L_G * r + eps_norm)


@dataclass(frozen=True)
class GoodEventFlags:
    """Membership of one noise realization in the sets of the MSE bound."""

    small_noise: bool
    small_noise_and_beta: bool
    perturbation: bool

    @property
    def all(self) -> bool:
        return self.small_noise and self.small_noise_and_beta and self.perturbation


def good_event_flags(constants: TheoryConstants, eps_norm: float, beta: float) -> GoodEventFlags:
    """
    Args:
        constants: Theory constants (their theta, C1 and C4 are used).
        eps_norm: ||eps||_{Sigma0^{-1}} of the realization.
        beta: Regularization parameter.
    """
    limit = constants.theta**2 / 64.0
    return GoodEventFlags(
        small_noise=constants.C4 * eps_norm / beta <= limit,
        small_noise_and_beta=constants.C4 * (eps_norm + beta) ** 2 / beta <= limit,
        perturbation=constants.C1 * (eps_norm + beta) <= 1.0,
    )


def good_event_probability(
    constants: TheoryConstants,
    n_obs: int,
    p: float,
    beta0: float,
    theta: Optional[float] = None,
) -> float:
    """Lower bound on the probability that both good-event conditions hold, clipped to [0, 1]."""
    theta = constants.theta if theta is None else theta
    C4 = constants.C4
    first = (theta**2 * beta0 / (64.0 * C4)) ** 2
    shift = max(0.0, math.sqrt(p) * theta * math.sqrt(beta0) / (8.0 * math.sqrt(C4)) - beta0)
    bound = 1.0 - 2.0 * math.exp(-first / (2.0 * n_obs)) - 2.0 * math.exp(-(shift**2) / (2.0 * n_obs))
    return float(min(1.0, max(0.0, bound)))


def pointwise_hk_bound(
    constants: TheoryConstants, n_obs: int, p: float, beta0: float, delta: float
) -> float:
    """d_HK bound 8 C1 p^{-1/2} (sqrt(-2 N_o ln(delta / 2)) + beta0), holding w.p. >= 1 - 2 delta."""
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    return 8.0 * constants.C1 / math.sqrt(p) * (math.sqrt(-2.0 * n_obs * math.log(delta / 2.0)) + beta0)


def norm_bound(eps_norm: float, beta: float, reference_tv: float) -> float:
    """||mu_bar||_M <= ||eps||^2_{Sigma0^{-1}} / (2 beta) + ||mu_ref||_M."""
    return eps_norm**2 / (2.0 * beta) + reference_tv
