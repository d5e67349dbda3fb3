import json

import numpy as np
import pytest

from lqgmfg.model import (PopulationSpec, SubpopParams, TimeTable, expand,
                          mixture_weights, selector_matrix, spec_from_json,
                          spec_to_json, validate_spec)
from lqgmfg.presets import two_type_spec


def scalar_spec(**kw):
    fields = dict(A=0.0, B=1.0, Q=1.0, R=1.0)
    fields.update(kw)
    sub = SubpopParams(**fields)
    return PopulationSpec(subpops=(sub,), pi=[1.0], rho=0.5,
                          x0_mean=[0.0], x0_cov=[[0.0]])


def test_validate_ok_scalar():
    report = validate_spec(scalar_spec())
    assert report.ok and report.violations == ()


def test_validate_r_not_pd():
    report = validate_spec(scalar_spec(R=-1.0))
    assert not report.ok
    assert any("R not positive definite" in msg for _a, msg in report.violations)


def test_validate_mixture_sum():
    spec = two_type_spec()
    bad = PopulationSpec(subpops=spec.subpops, pi=[0.6, 0.5], rho=0.5,
                         x0_mean=spec.x0_mean, x0_cov=spec.x0_cov)
    report = validate_spec(bad)
    assert any("mixture weights sum != 1" in msg for _a, msg in report.violations)


def test_validate_convexity_cross_term():
    # Q - S R^-1 S^T = 1 - 4 < 0
    report = validate_spec(scalar_spec(S=2.0))
    assert any("not positive semidefinite" in msg for _a, msg in report.violations)


def test_validate_rho_and_cov():
    spec = scalar_spec()
    bad = PopulationSpec(subpops=spec.subpops, pi=[1.0], rho=0.0,
                         x0_mean=[0.0], x0_cov=[[-1.0]])
    report = validate_spec(bad)
    ids = {a for a, _m in report.violations}
    assert "discount" in ids and "initial-state" in ids


def test_validate_idempotent_pure():
    spec = two_type_spec()
    assert validate_spec(spec) == validate_spec(spec)


def test_mixture_weights():
    assert np.allclose(mixture_weights([3, 1]), [0.75, 0.25])
    assert np.allclose(mixture_weights([5]), [1.0])
    with pytest.raises(ValueError, match="empty population"):
        mixture_weights([0, 0])


def test_selector_matrix():
    assert np.array_equal(selector_matrix(1, 1, 2), [[1.0, 0.0]])
    e2 = selector_matrix(2, 2, 2)
    assert np.array_equal(e2, np.hstack([np.zeros((2, 2)), np.eye(2)]))
    with pytest.raises(ValueError):
        selector_matrix(3, 1, 2)


def test_selector_extracts_block():
    rng = np.random.default_rng(0)
    n, K = 3, 4
    stacked = rng.normal(size=n * K)
    for k in range(1, K + 1):
        block = selector_matrix(k, n, K) @ stacked
        assert np.array_equal(block, stacked[(k - 1) * n: k * n])


def test_expand_shape_and_row_sums():
    rng = np.random.default_rng(1)
    for K in (1, 2, 3):
        pi = rng.random(K)
        pi = pi / pi.sum()
        F = rng.normal(size=(3, 3))
        Fb = expand(F, pi)
        assert Fb.shape == (3, 3 * K)
        assert np.allclose(Fb.sum(axis=1), F.sum(axis=1))
        # acts on a stacked vector as the pi-weighted average block
        blocks = rng.normal(size=(K, 3))
        assert np.allclose(Fb @ blocks.ravel(), F @ (pi @ blocks))


def test_timetable_constant_and_affine():
    const = TimeTable(np.array([1.0, 2.0]))
    assert np.allclose(const(0.3), [1.0, 2.0])
    tab = TimeTable(np.array([[0.0], [1.0]]), times=np.array([0.0, 2.0]))
    assert np.allclose(tab(1.0), [0.5])
    assert np.allclose(tab(5.0), [1.0])  # holds final value
    assert tab(np.array([0.0, 2.0])).shape == (2, 1)


def test_json_round_trip(tmp_path):
    spec = two_type_spec()
    doc = spec_to_json(spec)
    text = json.dumps(doc)
    back = spec_from_json(json.loads(text))
    assert back.rho == spec.rho
    assert np.array_equal(back.pi, spec.pi)
    for p, q in zip(back.subpops, spec.subpops):
        for name in ("A", "B", "F", "H", "D", "Q", "R", "S", "eta", "nvec", "psi"):
            assert np.array_equal(getattr(p, name), getattr(q, name))
        assert p.lambda_explore == q.lambda_explore
        assert p.phi_lagrange == q.phi_lagrange


def test_dims_inconsistency_reported():
    sub = SubpopParams(A=np.zeros((2, 2)), B=np.ones((2, 1)),
                       Q=np.eye(2), R=np.eye(1), eta=np.zeros(3))
    spec = PopulationSpec(subpops=(sub,), pi=[1.0], rho=0.5,
                          x0_mean=np.zeros(2), x0_cov=np.zeros((2, 2)))
    report = validate_spec(spec)
    assert any(a == "dimensions" for a, _m in report.violations)
