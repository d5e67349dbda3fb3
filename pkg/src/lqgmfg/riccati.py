"""Discounted algebraic Riccati equation with cross terms, its finite-horizon
differential form, and the stability-margin checks.

The stationary equation solved here is

    rho*Pi = Pi A + A^T Pi - (Pi B + S) R^-1 (B^T Pi + S^T) + Q,

which is the standard cross-term ARE for the shifted matrix A - (rho/2) I.
Rather than a Hamiltonian eigen-decomposition we integrate the differential
Riccati equation backward from Pi(T) = 0 until the flow is stationary: it is
simpler, handles the cross term uniformly, and the transient solver is
needed anyway for finite-horizon problems.  Q - S R^-1 S^T >= 0 keeps the
flow in the PSD cone from the zero seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SubpopParams
from .numerics import TimeGrid, Trajectory, integrate_ode, spectral_abscissa

__all__ = [
    "RiccatiSolution",
    "StabilityReport",
    "RiccatiError",
    "are_residual",
    "solve_discounted_are",
    "solve_differential_riccati",
    "verify_stability",
]


class RiccatiError(RuntimeError):
    pass


@dataclass(frozen=True)
class RiccatiSolution:
    Pi: np.ndarray
    residual: float
    iterations: int
    closed_loop_abscissa: float


@dataclass(frozen=True)
class StabilityReport:
    """Assumption-4(ii) margins: all three must be positive for ok=True."""

    ok: bool
    pi_min_eig: float
    abar_margin: float
    closed_loop_margin: float
    messages: tuple[str, ...] = ()


def are_residual(Pi: np.ndarray, params: SubpopParams, rho: float) -> float:
    """Frobenius norm of the stationary-equation defect at Pi."""
    A, B, Q, R, S = params.A, params.B, params.Q, params.R, params.S
    G = Pi @ B + S
    defect = rho * Pi - Pi @ A - A.T @ Pi + G @ np.linalg.solve(R, G.T) - Q
    return float(np.linalg.norm(defect, "fro"))


def _riccati_rhs(params: SubpopParams, rho: float):
    A, B, Q, R, S = params.A, params.B, params.Q, params.R, params.S

    def rhs(_t, Pi):
        G = Pi @ B + S
        return rho * Pi - Pi @ A - A.T @ Pi + G @ np.linalg.solve(R, G.T) - Q

    return rhs


def closed_loop_matrix(params: SubpopParams, Pi: np.ndarray) -> np.ndarray:
    """A - B R^-1 (B^T Pi + S^T): the per-agent closed-loop drift."""
    A, B, R, S = params.A, params.B, params.R, params.S
    return A - B @ np.linalg.solve(R, B.T @ Pi + S.T)


def solve_discounted_are(params: SubpopParams, rho: float, tol: float = 1e-10,
                         dt: float = 0.05) -> RiccatiSolution:
    """Solve the discounted cross-term ARE by backward integration.

    Integrates the differential equation backward from Pi(T)=0 in windows of
    one time unit; stops once the window-to-window change is below
    tol*(1+||Pi||) and the algebraic residual is below tol.  The equilibrium
    is a fixed point of the RK4 map, so the step only needs to keep the flow
    stable, not accurate: the default is coarse and halves automatically on
    an unstable window.  Exceeding the maximum horizon (no stationary limit)
    signals an Assumption-4 failure and raises RiccatiError.
    """
    n = params.n
    Pi = np.zeros((n, n))
    rhs = _riccati_rhs(params, rho)
    window = 1.0
    steps = max(int(round(window / dt)), 4)
    elapsed = 0.0
    iterations = 0
    prev_resid = np.inf
    stagnant = 0
    while True:
        traj = None
        while traj is None:
            grid = TimeGrid(0.0, window, steps)
            try:
                traj = integrate_ode(rhs, Pi, grid, direction="backward")
            except RuntimeError as exc:
                steps *= 2
                if steps > 16384:
                    raise RiccatiError(f"Riccati did not stabilize: {exc}") from exc
        Pi_new = 0.5 * (traj.values[0] + traj.values[0].T)
        iterations += 1
        elapsed += window
        change = np.linalg.norm(Pi_new - Pi, "fro")
        scale = 1.0 + np.linalg.norm(Pi_new, "fro")
        Pi = Pi_new
        resid = are_residual(Pi, params, rho)
        if change < tol * scale and resid <= tol:
            break
        # the continuous equilibrium is a fixed point of the RK4 map, so once
        # the iterate is stationary the residual contracts until round-off; a
        # non-improving residual above tol at stationarity is a genuine floor
        if change < 1e-3 * scale and resid > tol and resid >= 0.99 * prev_resid:
            stagnant += 1
            if stagnant >= 3:
                raise RiccatiError(
                    f"Riccati did not stabilize: residual floor {resid:.3e} "
                    f"above tol {tol:.1e}")
        else:
            stagnant = 0
        prev_resid = resid
        margin = rho / 2.0 - spectral_abscissa(closed_loop_matrix(params, Pi))
        max_horizon = 200.0 / max(rho, abs(margin), 0.1)
        if elapsed > max_horizon:
            raise RiccatiError(
                f"Riccati did not stabilize within horizon {max_horizon:.1f} "
                f"(change {change:.3e}, residual {resid:.3e})")
    cl = spectral_abscissa(closed_loop_matrix(params, Pi))
    return RiccatiSolution(Pi=Pi, residual=resid, iterations=iterations,
                           closed_loop_abscissa=cl)


def solve_differential_riccati(params: SubpopParams, rho: float, Pi_T: np.ndarray,
                               grid: TimeGrid) -> Trajectory:
    """Backward RK4 solution of the matrix Riccati ODE with Pi(grid.t1)=Pi_T.

    Every stored Pi(t) is symmetrized; finite-escape blow-up raises with the
    escape time.
    """
    Pi_T = np.atleast_2d(np.asarray(Pi_T, dtype=float))
    if Pi_T.shape != (params.n, params.n):
        raise ValueError(f"Pi_T must be {params.n}x{params.n}, got {Pi_T.shape}")
    if np.max(np.abs(Pi_T - Pi_T.T)) > 1e-10 * (1.0 + np.max(np.abs(Pi_T))):
        raise ValueError("Pi_T must be symmetric")
    rhs = _riccati_rhs(params, rho)
    traj = integrate_ode(rhs, Pi_T, grid, direction="backward")
    traj.values = 0.5 * (traj.values + np.transpose(traj.values, (0, 2, 1)))
    return traj


def verify_stability(solution: RiccatiSolution, Abar: np.ndarray, rho: float,
                     pi_floor: float = 0.0) -> StabilityReport:
    """Check the Assumption-4(ii) conditions and report the margins.

    (a) Pi positive definite, (b) spectral abscissa of the aggregate drift
    below rho/2, (c) per-agent closed-loop abscissa below rho/2.  The matrix
    inequalities are read as Hurwitz-type spectral conditions, which is what
    boundedness of the discounted trajectories requires.
    """
    msgs = []
    w = np.linalg.eigvalsh(0.5 * (solution.Pi + solution.Pi.T))
    pi_min = float(w[0])
    if pi_min <= pi_floor:
        msgs.append("Pi not positive definite")
    abar_margin = rho / 2.0 - spectral_abscissa(np.asarray(Abar, dtype=float))
    if abar_margin <= 0:
        msgs.append("aggregate drift margin nonpositive (Abar - rho/2 I not Hurwitz)")
    cl_margin = rho / 2.0 - solution.closed_loop_abscissa
    if cl_margin <= 0:
        msgs.append("closed-loop margin nonpositive")
    return StabilityReport(ok=not msgs, pi_min_eig=pi_min, abar_margin=abar_margin,
                           closed_loop_margin=cl_margin, messages=tuple(msgs))
