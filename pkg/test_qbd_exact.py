#!/usr/bin/env python3
"""
Tests for the exact relay-queue solver
"""
import numpy as np
import pytest
from numpy.polynomial import polynomial as P

from models.errors import NoInteriorRoot
from services.policy import SsPolicy, ss_params
from services.qbd_exact import (
    ChainSpec,
    balance_residuals,
    build_chain,
    cofactor_coefficients,
    pi0_identity_check,
    power_stationary,
    solve_stationary,
    truncated_chain_matrix,
)
from conftest import random_links


def random_chain(rng, k, min_drift=0.25):
    """Stable chain with every transition present"""
    while True:
        a11, a12, b11, b12, _ = rng.dirichlet([1.0] * 5)
        a01, a02, _ = rng.dirichlet([1.0] * 3)
        spec = ChainSpec(a01=a01, a02=a02, a11=a11, a12=a12, b11=b11, b12=b12, k=k)
        if spec.drift > min_drift:
            return spec


def characteristic_polynomial(spec):
    k = spec.k
    c = np.zeros(2 * k + 1)
    c[2 * k] += spec.b11
    c[k + 1] += spec.b12
    c[k] -= spec.a1 + spec.b1
    c[k - 1] += spec.a12
    c[0] += spec.a11
    return c


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_cofactor_divides_characteristic_polynomial(rng, k):
    for _ in range(10):
        spec = random_chain(rng, k)
        cof = cofactor_coefficients(spec)
        product = P.polymul([-1.0, 1.0], cof)
        assert np.allclose(product, characteristic_polynomial(spec), atol=1e-14)
        assert P.polyval(1.0, cof) == pytest.approx(spec.drift, abs=1e-14)


def test_cofactor_k2_cubic():
    spec = ChainSpec(a01=0.3, a02=0.2, a11=0.1, a12=0.15, b11=0.3, b12=0.2, k=2)
    cof = cofactor_coefficients(spec)
    expected = [-0.1, -0.1 - 0.15, 0.3 + 0.2, 0.3]
    assert np.allclose(cof, expected)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_matches_truncated_chain(rng, k):
    """Root expansion agrees with repeated squaring of a 400-state truncation"""
    for _ in range(8):
        spec = random_chain(rng, k)
        dist = solve_stationary(spec)
        oracle = power_stationary(truncated_chain_matrix(spec, 400))
        got = np.array([dist.pi(n) for n in range(11)])
        assert np.max(np.abs(got - oracle[:11])) < 1e-6
        mean = float(np.dot(np.arange(400), oracle))
        assert dist.mean_backlog() == pytest.approx(mean, rel=1e-5, abs=1e-8)


@pytest.mark.slow
def test_matches_truncated_chain_on_two_hundred_specs(rng):
    """Pi_0..Pi_10 agree with a 400-state truncation on 100 chains each for k = 2 and k = 3"""
    for k in (2, 3):
        for _ in range(100):
            spec = random_chain(rng, k)
            dist = solve_stationary(spec)
            oracle = power_stationary(truncated_chain_matrix(spec, 400))
            got = np.array([dist.pi(n) for n in range(11)])
            assert np.max(np.abs(got - oracle[:11])) < 1e-6


def test_short_r1_grant_is_a_self_loop():
    """Below k units an r1 downlink slot leaves the queue where it is"""
    spec = ChainSpec(a01=0.3, a02=0.2, a11=0.1, a12=0.15, b11=0.3, b12=0.2, k=2)
    P_mat = truncated_chain_matrix(spec, 20)
    assert P_mat[1, 1] == pytest.approx(1.0 - spec.a11 - spec.a12 - spec.b12)
    assert P_mat[1, 1] >= spec.b11
    assert P_mat[2, 0] == pytest.approx(spec.b11)

    dist = solve_stationary(spec)
    a0 = spec.a02 + 2 * spec.a01
    slack = spec.drift
    birth_death = slack / (slack + a0)
    assert dist.pi0 < birth_death
    assert dist.pi0 == pytest.approx(birth_death - 2 * spec.b11 * dist.pi(1) / (slack + a0), abs=1e-9)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_normalization_and_balance(rng, k):
    for _ in range(10):
        spec = random_chain(rng, k)
        dist = solve_stationary(spec)
        assert dist.total_mass() == pytest.approx(1.0, abs=1e-9)
        assert np.max(np.abs(balance_residuals(spec, dist, 4 * k))) < 1e-9
        assert all(dist.pi(n) >= -1e-12 for n in range(30))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_empty_probability_identity(rng, k):
    """Pi_0 equals the birth-death value minus the wasted r1 grants"""
    for _ in range(10):
        spec = random_chain(rng, k)
        dist = solve_stationary(spec)
        assert pi0_identity_check(spec, dist) < 1e-9


def test_k1_is_birth_death(rng):
    spec = random_chain(rng, 1)
    dist = solve_stationary(spec)
    expected = (spec.b1 - spec.a1) / (spec.b1 - spec.a1 + spec.a0)
    assert dist.pi0 == pytest.approx(expected, abs=1e-12)


def test_no_arrivals_means_always_empty():
    spec = ChainSpec(a01=0.0, a02=0.0, a11=0.0, a12=0.0, b11=0.3, b12=0.2, k=2)
    dist = solve_stationary(spec)
    assert dist.pi0 == 1.0
    assert dist.pi(5) == 0.0
    assert dist.mean_backlog() == 0.0


def test_unstable_chain_reports_drift():
    spec = ChainSpec(a01=0.4, a02=0.2, a11=0.4, a12=0.2, b11=0.1, b12=0.1, k=2)
    with pytest.raises(NoInteriorRoot) as err:
        solve_stationary(spec)
    assert err.value.drift == pytest.approx(spec.drift)
    assert err.value.drift < 0


def test_zero_drift_is_not_normalizable():
    spec = ChainSpec(a01=0.3, a02=0.1, a11=0.1, a12=0.2, b11=0.1, b12=0.2, k=2)
    assert spec.drift == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(NoInteriorRoot):
        solve_stationary(spec)


def test_chain_validation():
    with pytest.raises(ValueError):
        ChainSpec(a01=0.5, a02=0.6, a11=0.1, a12=0.1, b11=0.1, b12=0.1, k=2)
    with pytest.raises(ValueError):
        ChainSpec(a01=0.1, a02=0.1, a11=0.4, a12=0.3, b11=0.2, b12=0.2, k=2)
    with pytest.raises(ValueError):
        ChainSpec(a01=0.1, a02=0.1, a11=0.1, a12=0.1, b11=0.1, b12=0.1, k=0)


def test_truncated_matrix_is_stochastic(rng):
    spec = random_chain(rng, 3)
    P_mat = truncated_chain_matrix(spec, 50)
    assert np.allclose(P_mat.sum(axis=1), 1.0)
    assert np.all(P_mat >= 0)
    # r1 grants below k units carry nothing
    assert P_mat[2, 0] == 0.0


def test_power_stationary_reports_non_convergence():
    sticky = np.array([[1 - 1e-6, 1e-6], [1e-6, 1 - 1e-6]])
    with pytest.raises(ValueError):
        power_stationary(sticky, maxit=5)


@pytest.mark.parametrize("pid", [1, 2, 3, 4, 5, 6])
def test_policy_chains_are_valid(rng, pid):
    """Every fraction vector yields exclusive slot events"""
    links = random_links(rng)
    params = ss_params(SsPolicy(pid), *links)
    for _ in range(20):
        alpha = rng.random(4)
        spec = build_chain(params, links.s, links.d, alpha, 2)
        assert spec.a11 + spec.a12 + spec.b11 + spec.b12 <= 1 + 1e-12
        assert spec.a01 == pytest.approx(links.s.p(1) * params.U)
