"""Shared fixtures: solved reference games (cached per session) and
closed-form oracles used across the test modules."""

from __future__ import annotations

import math

import pytest

from lqgmfg import solve_consistency
from lqgmfg.presets import (coupled_single_type_spec, planar_spec,
                            scalar_decoupled_spec, two_type_spec)


def scalar_are_root(A, B, Q, R, S, rho):
    """Positive root of the scalar discounted ARE
    (B^2/R) Pi^2 + (rho - 2A + 2BS/R) Pi + (S^2/R - Q) = 0."""
    a2 = B * B / R
    a1 = rho - 2.0 * A + 2.0 * B * S / R
    a0 = S * S / R - Q
    disc = a1 * a1 - 4.0 * a2 * a0
    return (-a1 + math.sqrt(disc)) / (2.0 * a2)


@pytest.fixture(scope="session")
def decoupled():
    spec = scalar_decoupled_spec(lambda_explore=0.2, rho=0.5, A=0.0)
    return spec, solve_consistency(spec)


@pytest.fixture(scope="session")
def decoupled_noisy():
    spec = scalar_decoupled_spec(lambda_explore=0.2, rho=0.5, A=0.0,
                                 D=0.3, x0_var=0.25)
    return spec, solve_consistency(spec)


@pytest.fixture(scope="session")
def decoupled_coe():
    spec = scalar_decoupled_spec(lambda_explore=0.2, rho=0.1)
    return spec, solve_consistency(spec)


@pytest.fixture(scope="session")
def coupled():
    spec = coupled_single_type_spec()
    return spec, solve_consistency(spec)


@pytest.fixture(scope="session")
def two_type():
    spec = two_type_spec()
    return spec, solve_consistency(spec)


@pytest.fixture(scope="session")
def planar():
    spec = planar_spec(lambda_explore=0.2, rho=0.1)
    return spec, solve_consistency(spec)
