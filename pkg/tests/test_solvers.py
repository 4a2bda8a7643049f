"""Tests for PDAP, the stationary Gauss-Newton solver and the linearized estimate."""

import logging

import numpy as np
import pytest

from sik import solvers
from sik.forward import sample_noise, sample_seed, synthesize
from sik.measures import ParamVec, SparseMeasure, params_from_measure, weighted_norm, weighting_from
from sik.models import GnConfig, PdapConfig, SensorConfig, SolveStatus
from sik.solvers import (
    _l1_least_squares,
    _reduce_support,
    blasso_objective,
    linearized_estimate,
    solve_blasso_pdap,
    solve_coefficients,
    stationarity_residual,
    stationary_gauss_newton,
)

FAST_PDAP = PdapConfig(grid_resolution=512)


def test_l1_least_squares_identity_is_soft_threshold():
    """Test A = Id gives the soft-thresholded data."""
    b = np.array([1.0, -0.3, 0.05, -2.0])
    q = _l1_least_squares(np.eye(4), b, beta=0.1, tol=1e-14)
    assert np.allclose(q, [0.9, -0.2, 0.0, -1.9])


def test_l1_least_squares_empty():
    """Test an empty support returns no coefficients."""
    assert _l1_least_squares(np.zeros((3, 0)), np.ones(3), 0.1, 1e-12).size == 0


def test_semismooth_fallback_logs_quietly(monkeypatch, caplog):
    """Test the FISTA fallback stays below WARNING when it reaches the tolerance."""
    monkeypatch.setattr(solvers, "SSN_MAX_ITERS", 0)
    rng = np.random.default_rng(8)
    A, b = rng.standard_normal((6, 4)), rng.standard_normal(6)
    with caplog.at_level(logging.DEBUG, logger="sik.solvers"):
        q = _l1_least_squares(A, b, beta=0.1, tol=1e-10)
    assert solvers._kkt_residual(A, b, q, 0.1) <= 1e-10
    assert "falling back to FISTA" in caplog.text
    assert not [r for r in caplog.records if r.levelno >= logging.WARNING]


def test_fista_warns_when_tolerance_missed(monkeypatch, caplog):
    """Test FISTA reports running out of iterations."""
    monkeypatch.setattr(solvers, "FISTA_MAX_ITERS", 2)
    rng = np.random.default_rng(9)
    A, b = rng.standard_normal((6, 4)), rng.standard_normal(6)
    with caplog.at_level(logging.WARNING, logger="sik.solvers"):
        solvers._fista(A, b, 0.1, np.zeros(4), tol=1e-14)
    assert "FISTA stopped after 2 iterations" in caplog.text


def test_solve_coefficients_kkt(kernel, sensors9, truth):
    """Test the optimality conditions of the weight subproblem."""
    z = synthesize(kernel, sensors9, truth).z
    beta = 0.01
    support = np.array([[-0.7], [-0.3], [0.3], [0.8]])
    q = solve_coefficients(kernel, sensors9, support, z, beta)
    A = kernel.values(sensors9.points, support)
    grad = A.T @ (sensors9.weights * (A @ q - z))
    active = q != 0
    assert np.allclose(grad[active], -beta * np.sign(q[active]), atol=1e-9)
    assert np.all(np.abs(grad[~active]) <= beta + 1e-9)


def test_objective_and_stationarity(kernel, sensors9, truth, m_ref):
    """Test the empty measure costs 0.5 ||z||^2 and the truth is stationary without penalty."""
    z = synthesize(kernel, sensors9, truth).z
    empty = SparseMeasure.empty(1, truth.domain)
    assert blasso_objective(kernel, sensors9, z, 0.1, empty) == pytest.approx(
        0.5 * np.sum(sensors9.weights * z**2)
    )
    assert np.allclose(stationarity_residual(kernel, sensors9, z, 0.0, m_ref), 0.0, atol=1e-12)
    shifted = stationarity_residual(kernel, sensors9, z, 0.5, m_ref)
    assert np.allclose(shifted, 0.5 * np.array([1.0, 1.0, -1.0, 0.0, 0.0, 0.0]), atol=1e-12)


def test_pdap_exact_data(kernel, sensors9, truth):
    """Test PDAP recovers three atoms near the truth from exact data."""
    obs = synthesize(kernel, sensors9, truth)
    mu_bar, report = solve_blasso_pdap(kernel, sensors9, obs, 0.005, FAST_PDAP)
    assert report.status == SolveStatus.CONVERGED
    assert report.certificate_max <= 1.0 + FAST_PDAP.tol_cert
    assert mu_bar.n_atoms == 3
    assert np.allclose(mu_bar.positions[:, 0], truth.positions[:, 0], atol=0.05)
    assert np.array_equal(np.sign(mu_bar.weights), np.sign(truth.weights))
    assert report.atom_counts[0] == 0


def test_pdap_rejects_nonpositive_beta(kernel, sensors9, truth):
    """Test beta <= 0 is rejected."""
    with pytest.raises(ValueError):
        solve_blasso_pdap(kernel, sensors9, synthesize(kernel, sensors9, truth), 0.0)


def test_pdap_large_beta_returns_empty(kernel, sensors9, truth):
    """Test beta above max |K* z| gives the zero measure."""
    obs = synthesize(kernel, sensors9, truth)
    mu_bar, report = solve_blasso_pdap(kernel, sensors9, obs, 100.0, FAST_PDAP)
    assert mu_bar.n_atoms == 0
    assert report.status == SolveStatus.CONVERGED


@pytest.mark.parametrize("p", [1e2, 1e3, 1e4])
def test_pdap_objective_monotone_and_atoms_capped(kernel, truth, p):
    """Test the objective never increases across outer iterations and mu_bar has at most N_o atoms."""
    sensors = SensorConfig.uniform(9, p=p)
    beta = 2.0 / np.sqrt(p)
    for index in range(5):
        obs = synthesize(kernel, sensors, truth, seed=sample_seed(42, index))
        mu_bar, report = solve_blasso_pdap(kernel, sensors, obs, beta, FAST_PDAP)
        assert len(report.objectives) >= 2
        assert np.all(np.diff(report.objectives) <= 1e-12)
        assert report.objectives[-1] == pytest.approx(report.objective)
        assert report.objective == pytest.approx(blasso_objective(kernel, sensors, obs, beta, mu_bar))
        assert mu_bar.n_atoms <= sensors.n_obs


def test_reduce_support_caps_atoms():
    """Test the support reduction keeps A q fixed without growing ||q||_1."""
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 7))
    q = rng.uniform(0.1, 1.0, 7) * rng.choice([-1.0, 1.0], 7)
    reduced = _reduce_support(A, q, 3)
    assert np.count_nonzero(reduced) <= 3
    assert np.allclose(A @ reduced, A @ q)
    assert np.sum(np.abs(reduced)) <= np.sum(np.abs(q)) + 1e-12
    assert np.array_equal(_reduce_support(A[:, :3], q[:3], 3), q[:3])


def test_gauss_newton_recovers_truth(kernel, sensors9, truth, m_ref):
    """Test exact data and beta = 0 bring a perturbed start back to the truth."""
    z = synthesize(kernel, sensors9, truth).z
    start = ParamVec(m_ref.q * 1.05, m_ref.y + np.array([0.02, -0.01, 0.015]))
    m_hat, report = stationary_gauss_newton(kernel, sensors9, z, 0.0, start, GnConfig(relinearize=True))
    assert report.status == SolveStatus.CONVERGED
    assert np.allclose(m_hat.as_array(), m_ref.as_array(), atol=1e-8)


def test_gauss_newton_singular_start(kernel, sensors9, truth, m_ref):
    """Test coincident atoms are reported as singular."""
    z = synthesize(kernel, sensors9, truth).z
    start = ParamVec(m_ref.q, np.zeros(3))
    m_hat, report = stationary_gauss_newton(kernel, sensors9, z, 0.01, start)
    assert report.status == SolveStatus.SINGULAR
    assert m_hat is start


def test_gauss_newton_keeps_signs(kernel, sensors9, truth, m_ref):
    """Test a penalty that would drive weights through zero never flips a sign."""
    z = synthesize(kernel, sensors9, truth).z
    m_hat, report = stationary_gauss_newton(kernel, sensors9, z, 5.0, m_ref)
    assert report.status != SolveStatus.SINGULAR
    assert np.all(np.sign(m_hat.q) == np.sign(m_ref.q))


def test_linearization_small_beta(kernel, sensors9, truth, m_ref):
    """Test m_hat - m_ref agrees with dm_hat up to second order in beta."""
    z = synthesize(kernel, sensors9, truth).z
    beta = 1e-5
    m_hat, report = stationary_gauss_newton(kernel, sensors9, z, beta, m_ref)
    assert report.status == SolveStatus.CONVERGED
    dm = linearized_estimate(sensors9, kernel, m_ref, np.zeros(9), beta)
    W = weighting_from(m_ref.q)
    remainder = weighted_norm(m_hat - m_ref - dm, W)
    assert remainder <= 1e-2 * weighted_norm(dm, W)


def test_linearized_estimate_noise_only(kernel, sensors9, m_ref):
    """Test dm_hat is linear in eps when beta = 0."""
    eps = sample_noise(sensors9, sample_seed(3, 0))
    one = linearized_estimate(sensors9, kernel, m_ref, eps, 0.0)
    two = linearized_estimate(sensors9, kernel, m_ref, 2.0 * eps, 0.0)
    assert np.allclose(two.as_array(), 2.0 * one.as_array())


@pytest.mark.slow
def test_pdap_and_gauss_newton_agree(kernel, sensors9, truth, m_ref):
    """Test mu_bar equals mu_hat whenever PDAP finds exactly three atoms."""
    beta = 2.0 / np.sqrt(sensors9.p)
    agreed = 0
    for index in range(20):
        obs = synthesize(kernel, sensors9, truth, seed=sample_seed(0, index))
        mu_bar, _ = solve_blasso_pdap(kernel, sensors9, obs, beta)
        if mu_bar.n_atoms != 3:
            continue
        m_hat, report = stationary_gauss_newton(kernel, sensors9, obs, beta, m_ref)
        assert report.status == SolveStatus.CONVERGED
        m_bar = params_from_measure(mu_bar)
        assert np.allclose(m_bar.as_array(), m_hat.as_array(), atol=1e-6)
        agreed += 1
    assert agreed >= 15
