"""
Distances between discrete signed measures.

Hellinger-Kantorovich distances are computed through the logarithmic
entropy-transport formulation

    d_HK^2(mu1, mu2) = min_{gamma >= 0} <gamma, C> + KL(gamma 1 | a) + KL(gamma^T 1 | b),
    C_ij = -log cos^2(min(|y_i - y_j|, pi/2)),

between the positive measures mu1^+ + mu2^- and mu2^+ + mu1^- (Jordan
recombination). An unbalanced Sinkhorn continuation provides the starting plan,
exact coordinate descent polishes it and a primal-dual gap certifies the value.
"""

from __future__ import annotations

import logging
import math
import warnings
from typing import Optional, Tuple

import numpy as np
import ot
from scipy.optimize import linprog

from sik.exceptions import ConfigError, ConvergenceError, NumericalError
from sik.measures import (
    ParamVec,
    SparseMeasure,
    add_measures,
    jordan_split,
    ratio_R,
    total_variation,
    weighted_norm,
    weighting_from,
)
from sik.models import HkSolveConfig

logger = logging.getLogger(__name__)

HALF_PI = 0.5 * math.pi
UNION_RADIUS = 1e-12
# Stand-in for infinite costs inside the entropic warm start.
LARGE_COST = 60.0
GAP_CHECK_EVERY = 10


def _sin_plus(z: float) -> float:
    return math.sin(min(z, HALF_PI))


def cone_dirac_hk(q1: float, y1: np.ndarray, q2: float, y2: np.ndarray) -> float:
    """
    Cone-metric distance between q1 delta_{y1} and q2 delta_{y2} of equal sign.

    d^2 = (sqrt|q1| - sqrt|q2|)^2 + 4 sqrt(|q1 q2|) sin_+^2(|y1 - y2| / 2).
    """
    if q1 * q2 <= 0:
        raise ConfigError("cone formula requires two nonzero weights of equal sign")
    a, b = abs(q1), abs(q2)
    dist = float(np.linalg.norm(np.atleast_1d(y1) - np.atleast_1d(y2)))
    d2 = (math.sqrt(a) - math.sqrt(b)) ** 2 + 4.0 * math.sqrt(a * b) * _sin_plus(dist / 2.0) ** 2
    return math.sqrt(max(d2, 0.0))


def _pair_cost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    dist = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1)
    cost = np.full(dist.shape, np.inf)
    finite = dist < HALF_PI
    cost[finite] = -np.log(np.cos(dist[finite]) ** 2)
    return cost


def _kl(r: np.ndarray, a: np.ndarray) -> np.ndarray:
    out = a.copy()
    pos = r > 0
    out[pos] = r[pos] * np.log(r[pos] / a[pos]) - r[pos] + a[pos]
    return out


def _primal(plan: np.ndarray, cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    finite = np.isfinite(cost)
    transport = float(np.sum(plan[finite] * cost[finite]))
    return transport + float(np.sum(_kl(plan.sum(axis=1), a))) + float(np.sum(_kl(plan.sum(axis=0), b)))


def _dual(plan: np.ndarray, cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Dual value of the feasible potentials built from the plan marginals."""
    finite = np.isfinite(cost)
    rows, cols = plan.sum(axis=1), plan.sum(axis=0)
    with np.errstate(divide="ignore"):
        phi = np.where(rows > 0, -np.log(rows / a), np.inf)
        psi = np.where(cols > 0, -np.log(cols / b), np.inf)
    # make phi_i + psi_j <= C_ij on finite-cost pairs
    with np.errstate(invalid="ignore"):
        slack = np.where(finite, cost - phi[:, None], np.inf)
    psi = np.minimum(psi, slack.min(axis=0))
    phi_term = np.where(np.isfinite(phi), a * (1.0 - np.exp(-phi)), a)
    psi_term = np.where(np.isposinf(psi), b, b * (1.0 - np.exp(-psi)))
    return float(np.sum(phi_term) + np.sum(psi_term))


def _sinkhorn_warm_start(a: np.ndarray, b: np.ndarray, cost: np.ndarray, cfg: HkSolveConfig) -> np.ndarray:
    """Entropic continuation over the eps schedule; returns the last finite plan."""
    M = np.where(np.isfinite(cost), cost, LARGE_COST)
    plan = np.outer(a, b) / max(a.sum(), b.sum())
    warmstart = None
    prev_eps = None
    for eps in cfg.eps_schedule:
        if warmstart is not None:
            warmstart = (warmstart[0] * prev_eps / eps, warmstart[1] * prev_eps / eps)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            candidate, log = ot.unbalanced.sinkhorn_unbalanced(
                a,
                b,
                M,
                reg=eps,
                reg_m=1.0,
                method="sinkhorn_stabilized",
                reg_type="kl",
                warmstart=warmstart,
                numItermax=cfg.max_iters,
                stopThr=cfg.tol,
                log=True,
            )
        if not np.all(np.isfinite(candidate)):
            logger.debug("entropic warm start stopped at eps=%.3e", eps)
            break
        change = float(np.max(np.abs(candidate - plan)))
        plan = np.asarray(candidate)
        warmstart = (np.asarray(log["logu"]), np.asarray(log["logv"]))
        prev_eps = eps
        if change <= cfg.tol:
            break
    plan = np.where(np.isfinite(cost), plan, 0.0)
    return plan


def _polish(plan: np.ndarray, cost: np.ndarray, a: np.ndarray, b: np.ndarray, cfg: HkSolveConfig) -> Tuple[np.ndarray, float]:
    """Exact coordinate descent on plan entries; returns the plan and the final duality gap."""
    plan = plan.copy()
    kappa = np.outer(a, b) * np.exp(-np.where(np.isfinite(cost), cost, np.inf))
    entries = [(i, j) for i in range(plan.shape[0]) for j in range(plan.shape[1]) if kappa[i, j] > 0]
    rows, cols = plan.sum(axis=1), plan.sum(axis=0)
    gap = math.inf
    for sweep in range(cfg.polish_sweeps):
        for i, j in entries:
            old = plan[i, j]
            R, S = rows[i] - old, cols[j] - old
            new = 0.5 * (-(R + S) + math.sqrt((R - S) ** 2 + 4.0 * kappa[i, j]))
            new = max(new, 0.0)
            plan[i, j] = new
            rows[i] = R + new
            cols[j] = S + new
        if sweep % GAP_CHECK_EVERY == 0 or sweep == cfg.polish_sweeps - 1:
            rows, cols = plan.sum(axis=1), plan.sum(axis=0)
            gap = _primal(plan, cost, a, b) - _dual(plan, cost, a, b)
            if gap <= cfg.tol:
                break
    return plan, max(gap, 0.0)


def _positive_hk2(mu: SparseMeasure, nu: SparseMeasure, cfg: HkSolveConfig) -> float:
    if mu.n_atoms == 0 or nu.n_atoms == 0:
        return total_variation(mu) + total_variation(nu)
    a, b = mu.weights, nu.weights
    cost = _pair_cost(mu.positions, nu.positions)
    if not np.any(np.isfinite(cost)):
        return float(a.sum() + b.sum())
    if a.size == 1 and b.size == 1:
        dist = float(np.linalg.norm(mu.positions[0] - nu.positions[0]))
        return float(a[0] + b[0] - 2.0 * math.sqrt(a[0] * b[0]) * math.cos(min(dist, HALF_PI)))
    plan = _sinkhorn_warm_start(a, b, cost, cfg)
    plan, gap = _polish(plan, cost, a, b, cfg)
    if gap > cfg.accept_gap:
        raise ConvergenceError(gap, f"entropy-transport solve stalled with duality gap {gap:.3e}")
    logger.debug("entropy-transport solve: %dx%d plan, gap %.2e", a.size, b.size, gap)
    return max(_primal(plan, cost, a, b), 0.0)


def hk_distance(mu1: SparseMeasure, mu2: SparseMeasure, cfg: Optional[HkSolveConfig] = None) -> float:
    """
    Hellinger-Kantorovich distance of two signed discrete measures.

    Args:
        mu1: First measure.
        mu2: Second measure.
        cfg: Solver settings; defaults to HkSolveConfig().

    Returns:
        d_HK(mu1, mu2) = d_HK(mu1^+ + mu2^-, mu2^+ + mu1^-).

    Raises:
        ConvergenceError: If the duality gap stays above `cfg.accept_gap`.
    """
    cfg = cfg or HkSolveConfig()
    p1, n1 = jordan_split(mu1)
    p2, n2 = jordan_split(mu2)
    left = add_measures(p1, n2, UNION_RADIUS)
    right = add_measures(p2, n1, UNION_RADIUS)
    return math.sqrt(_positive_hk2(left, right, cfg))


def hk_upper_bound(m: ParamVec, m_ref: ParamVec) -> float:
    """R(q, q_ref) ||m - m_ref||^2_{W_ref}, an upper bound of d_HK^2 for sign-matched atoms."""
    if m.n_atoms != m_ref.n_atoms or m.dim != m_ref.dim:
        raise ConfigError("upper bound requires equal atom counts")
    if np.any(np.sign(m.q) != np.sign(m_ref.q)):
        raise ConfigError("upper bound requires matching signs")
    if m.n_atoms == 0:
        return 0.0
    dist = weighted_norm(m - m_ref, weighting_from(m_ref.q, m_ref.dim))
    return ratio_R(m.q, m_ref.q) * dist**2


def kr_dirac_pair(q1: float, y1: np.ndarray, q2: float, y2: np.ndarray) -> float:
    """Flat distance between two Diracs."""
    dist = float(np.linalg.norm(np.atleast_1d(y1) - np.atleast_1d(y2)))
    if q1 * q2 >= 0:
        return abs(q1 - q2) + min(abs(q1), abs(q2)) * min(dist, 2.0)
    return abs(q1) + abs(q2)


def kr_distance(mu1: SparseMeasure, mu2: SparseMeasure) -> float:
    """
    Kantorovich-Rubinstein (flat) distance as the linear program

        max sum_i f_i m_i  s.t.  |f_i| <= 1,  f_i - f_j <= |y_i - y_j|,

    over the union support of mu1 - mu2.
    """
    diff = add_measures(mu1, -mu2, UNION_RADIUS)
    n = diff.n_atoms
    if n == 0:
        return 0.0
    if n == 1:
        return float(abs(diff.weights[0]))
    dist = np.linalg.norm(diff.positions[:, None, :] - diff.positions[None, :, :], axis=-1)
    rows, rhs = [], []
    for i in range(n):
        for j in range(n):
            if i != j and dist[i, j] < 2.0:
                row = np.zeros(n)
                row[i], row[j] = 1.0, -1.0
                rows.append(row)
                rhs.append(dist[i, j])
    result = linprog(
        -diff.weights,
        A_ub=np.asarray(rows) if rows else None,
        b_ub=np.asarray(rhs) if rhs else None,
        bounds=[(-1.0, 1.0)] * n,
        method="highs",
    )
    if not result.success:
        raise NumericalError(f"flat-metric linear program failed: {result.message}")
    return float(-result.fun)


def kr_upper_bound(m: ParamVec, m_ref: ParamVec) -> float:
    """sum_n |q_n - q_ref_n| + |q_ref_n| |y_n - y_ref_n|."""
    if m.n_atoms != m_ref.n_atoms or m.dim != m_ref.dim:
        raise ConfigError("upper bound requires equal atom counts")
    shift = np.linalg.norm(m.positions - m_ref.positions, axis=1)
    return float(np.sum(np.abs(m.q - m_ref.q) + np.abs(m_ref.q) * shift))


def tv_distance(mu1: SparseMeasure, mu2: SparseMeasure) -> float:
    """||mu1 - mu2||_M after merging coincident positions."""
    return total_variation(add_measures(mu1, -mu2, UNION_RADIUS))
