"""Ready-made reference games used by the demos, the CLI, and the test
suite.  All of them satisfy the model assumptions with comfortable margins
(checked in the tests) unless noted otherwise.
"""

from __future__ import annotations

import numpy as np

from .model import PopulationSpec, SubpopParams

__all__ = [
    "scalar_decoupled_spec",
    "coupled_single_type_spec",
    "two_type_spec",
    "planar_spec",
    "unstable_spec",
]


def scalar_decoupled_spec(lambda_explore: float = 0.2, rho: float = 0.1,
                          A: float = -0.5, D: float = 0.0, x0: float = 1.0,
                          x0_var: float = 0.0) -> PopulationSpec:
    """Scalar single-type game with no mean-field coupling (F = H = psi = 0)."""
    sub = SubpopParams(A=A, B=1.0, Q=1.0, R=1.0, D=D,
                       lambda_explore=lambda_explore)
    return PopulationSpec(subpops=(sub,), pi=[1.0], rho=rho,
                          x0_mean=[x0], x0_cov=[[x0_var]])


def coupled_single_type_spec(lambda_explore: float = 0.2, rho: float = 0.5,
                             F: float = 0.6, H: float = 0.3, psi: float = 0.15,
                             D: float = 0.15, x0: float = 1.0,
                             x0_var: float = 0.1) -> PopulationSpec:
    """Scalar single-type game with state, control, and tracking coupling.

    The couplings are strong enough that a tagged agent's finite-N feedback
    through the empirical averages is measurable at N = 16 (the epsilon-Nash
    experiments rely on this) while every stability margin stays positive.
    """
    sub = SubpopParams(A=0.0, B=1.0, Q=1.0, R=1.0, F=F, H=H, psi=psi, D=D,
                       lambda_explore=lambda_explore)
    return PopulationSpec(subpops=(sub,), pi=[1.0], rho=rho,
                          x0_mean=[x0], x0_cov=[[x0_var]])


def two_type_spec(rho: float = 0.5) -> PopulationSpec:
    """Two scalar sub-populations with asymmetric parameters and offsets."""
    sub1 = SubpopParams(A=-0.2, B=1.0, Q=1.0, R=1.0, S=0.2, F=0.3, H=0.1,
                        psi=0.25, D=0.2, eta=[0.1], nvec=[0.05], b=[0.1],
                        lambda_explore=0.1)
    sub2 = SubpopParams(A=0.1, B=0.8, Q=1.5, R=1.2, S=-0.1, F=0.2, H=0.15,
                        psi=0.4, D=0.25, eta=[-0.2], nvec=[0.0], b=[-0.05],
                        lambda_explore=0.3)
    return PopulationSpec(subpops=(sub1, sub2), pi=[0.6, 0.4], rho=rho,
                          x0_mean=[0.5], x0_cov=[[0.1]])


def planar_spec(lambda_explore: float = 0.2, rho: float = 0.1) -> PopulationSpec:
    """Two-dimensional state and control (m = 2), no coupling; arbitrates the
    dimension factor in the cost-of-exploration formula."""
    sub = SubpopParams(A=[[-0.5, 0.1], [0.0, -0.7]],
                       B=[[1.0, 0.0], [0.0, 1.0]],
                       Q=[[1.0, 0.0], [0.0, 1.0]],
                       R=[[1.0, 0.0], [0.0, 1.0]],
                       D=[[0.0], [0.0]],
                       lambda_explore=lambda_explore)
    return PopulationSpec(subpops=(sub,), pi=[1.0], rho=rho,
                          x0_mean=[1.0, -0.5], x0_cov=np.zeros((2, 2)))


def unstable_spec() -> PopulationSpec:
    """Single-type game whose aggregate drift violates the stability margin
    (Abar - rho/2 Hurwitz fails); the consistency iteration diverges."""
    sub = SubpopParams(A=0.0, B=1.0, Q=1.0, R=1.0, F=2.5, H=0.9, psi=0.0,
                       D=0.1, lambda_explore=0.1)
    return PopulationSpec(subpops=(sub,), pi=[1.0], rho=0.5,
                          x0_mean=[1.0], x0_cov=[[0.0]])
