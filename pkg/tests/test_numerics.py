import math

import numpy as np
import pytest

from lqgmfg.numerics import (OdeBlowupError, TimeGrid, Trajectory, agent_rng,
                             cholesky_psd, fit_rate, integrate_ode,
                             rk4_linear_tabulated, sample_gaussian,
                             spectral_abscissa)


def test_rk4_exponential():
    grid = TimeGrid(0.0, 1.0, 100)
    traj = integrate_ode(lambda t, y: -y, np.array([1.0]), grid)
    assert abs(traj.values[-1, 0] - math.exp(-1.0)) < 1e-8


def test_rk4_constant_and_linear():
    grid = TimeGrid(0.0, 2.0, 50)
    const = integrate_ode(lambda t, y: 0.0 * y, np.array([3.0]), grid)
    assert np.allclose(const.values, 3.0, atol=1e-14)
    lin = integrate_ode(lambda t, y: np.ones(1), np.array([0.0]), grid)
    assert abs(lin.values[-1, 0] - 2.0) < 1e-12


def test_rk4_order_four():
    def err(steps):
        grid = TimeGrid(0.0, 1.0, steps)
        traj = integrate_ode(lambda t, y: -y, np.array([1.0]), grid)
        return abs(traj.values[-1, 0] - math.exp(-1.0))

    ratio = err(50) / err(100)
    assert 12.0 < ratio < 20.0


def test_rk4_backward_matches_forward():
    grid = TimeGrid(0.0, 1.0, 200)
    fwd = integrate_ode(lambda t, y: -y, np.array([1.0]), grid)
    back = integrate_ode(lambda t, y: -y, fwd.values[-1], grid, "backward")
    assert np.allclose(back.values, fwd.values, atol=1e-10)


def test_rk4_blowup_reports_time():
    grid = TimeGrid(0.0, 3.0, 300)
    with pytest.raises(OdeBlowupError):
        integrate_ode(lambda t, y: y * y, np.array([1.0]), grid)


def test_rk4_linear_tabulated_matches_generic():
    grid = TimeGrid(0.0, 2.0, 100)
    M = np.array([[-0.3, 0.1], [0.0, -0.5]])
    ts_half = np.linspace(0.0, 2.0, 2 * grid.steps + 1)
    g_half = np.stack([np.sin(ts_half), np.cos(ts_half)], axis=1)
    tab = rk4_linear_tabulated(M, g_half, np.array([1.0, -1.0]), grid)
    gen = integrate_ode(lambda t, y: M @ y + np.array([math.sin(t), math.cos(t)]),
                        np.array([1.0, -1.0]), grid)
    assert np.allclose(tab.values, gen.values, atol=1e-12)


def test_spectral_abscissa():
    assert spectral_abscissa(np.eye(2)) == pytest.approx(1.0)
    assert spectral_abscissa(np.array([[0.0, 1.0], [-1.0, 0.0]])) == pytest.approx(0.0, abs=1e-12)
    assert spectral_abscissa(np.diag([-2.0, -3.0])) == pytest.approx(-2.0)


def test_spectral_abscissa_orthogonal_invariance():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(4, 4))
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    assert abs(spectral_abscissa(M) - spectral_abscissa(Q.T @ M @ Q)) < 1e-9


def test_sample_gaussian_degenerate():
    rng = np.random.default_rng(0)
    out = sample_gaussian(np.array([2.0, -1.0]), np.zeros((2, 2)), rng)
    assert np.array_equal(out, [2.0, -1.0])


def test_sample_gaussian_mean_clt():
    rng = np.random.default_rng(7)
    draws = sample_gaussian(np.zeros(2), np.eye(2), rng, size=1_000_000)
    # CLT bound 2.58/sqrt(N) per coordinate at 99%; assert the looser 4e-3
    assert np.all(np.abs(draws.mean(axis=0)) < 4e-3)


def test_sample_gaussian_covariance():
    rng = np.random.default_rng(11)
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    draws = sample_gaussian(np.zeros(2), cov, rng, size=1_000_000)
    emp = np.cov(draws.T)
    assert np.max(np.abs(emp - cov)) < 0.01


def test_sample_gaussian_reproducible():
    a = sample_gaussian(np.zeros(3), np.eye(3), np.random.default_rng(42), size=10)
    b = sample_gaussian(np.zeros(3), np.eye(3), np.random.default_rng(42), size=10)
    assert np.array_equal(a, b)


def test_sample_gaussian_rejects_indefinite():
    with pytest.raises(ValueError):
        cholesky_psd(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_agent_rng_streams_differ():
    a = agent_rng(123, 0).standard_normal(4)
    b = agent_rng(123, 1).standard_normal(4)
    c = agent_rng(123, 0).standard_normal(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)


def test_fit_rate():
    xs = np.array([16.0, 64.0, 256.0, 1024.0])
    assert fit_rate(xs, 1.0 / xs) == pytest.approx(-1.0, abs=1e-12)
    assert fit_rate(xs, 1.0 / np.sqrt(xs)) == pytest.approx(-0.5, abs=1e-12)
    assert fit_rate(xs, np.full(4, 3.0)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_rate(xs[:2], 1.0 / xs[:2])
    with pytest.raises(ValueError):
        fit_rate(xs, np.array([1.0, -1.0, 1.0, 1.0]))


def test_trajectory_interp_bounds():
    grid = TimeGrid(0.0, 1.0, 10)
    traj = Trajectory(grid, np.linspace(0.0, 1.0, 11)[:, None])
    assert traj.interp(0.55) == pytest.approx(0.55)
    with pytest.raises(ValueError):
        traj.interp(1.5)
