#!/usr/bin/env python3
"""
Tests for the slot-level simulator
"""
import csv

import numpy as np
import pytest

from models.errors import Inconclusive
from services.policy import MuPolicy
from services.region_mu import MuScenario, busy_probability, service_rates
from services.region_ss import SsScenario, exact_service_rates
from services.simulator import (
    SimConfig,
    SlotSimulator,
    analytic_rates,
    classify_slope,
    replicate,
    run,
    stability_check,
)
from conftest import fixed_links, random_links

ALPHA = (0.5, 0.5, 0.5, 0.5)


def _ss(k=2):
    return SsScenario(links=fixed_links(), r2=1.0, k=k)


def _mu():
    return MuScenario(K=1, U=1, p_s=(0.4,), p_d=(0.7,), p_u=(0.5,))


def test_config_validation():
    sc = _ss()
    with pytest.raises(ValueError):
        SimConfig(scenario=sc, policy=1, alpha=ALPHA, horizon=0)
    with pytest.raises(ValueError):
        SimConfig(scenario=sc, policy=1, alpha=(0.5, 0.5), horizon=10)
    with pytest.raises(ValueError):
        SimConfig(scenario=sc, policy=7, alpha=ALPHA, horizon=10)
    with pytest.raises(ValueError):
        SimConfig(scenario=sc, policy=1, alpha=ALPHA, horizon=10, arrival_mode="bernoulli", arrival_rates=(0.1,))
    with pytest.raises(ValueError):
        SimConfig(scenario=sc, policy=1, alpha=ALPHA, horizon=10, arrival_mode="bernoulli", arrival_rates=(3.0, 0.1))
    with pytest.raises(ValueError):
        SimConfig(scenario=_mu(), policy=1, alpha=(0.2,), horizon=10)


def test_same_seed_same_run():
    cfg = SimConfig(scenario=_ss(), policy=1, alpha=ALPHA, horizon=5000, seed=11)
    a, b = run(cfg), run(cfg)
    assert np.array_equal(a.empirical_mu, b.empirical_mu)
    assert a.final_backlogs == b.final_backlogs
    c = run(SimConfig(scenario=_ss(), policy=1, alpha=ALPHA, horizon=5000, seed=12))
    assert not np.array_equal(a.empirical_mu, c.empirical_mu)


def test_relay_conservation():
    out = run(SimConfig(scenario=_ss(), policy=3, alpha=ALPHA, horizon=20000, seed=3))
    assert np.array_equal(out.ul_departures, out.relay_arrivals)
    assert out.final_backlogs["q_bs"] == int(out.relay_arrivals[0] - out.dl_departures[0])
    assert out.final_backlogs["q_bs"] >= 0


def test_multi_user_conservation():
    policy = MuPolicy(order=(0, 1), n_flows=2)
    out = run(SimConfig(scenario=_mu(), policy=policy, alpha=(0.3,), horizon=20000, seed=5))
    assert np.array_equal(out.ul_departures, out.relay_arrivals)
    assert out.final_backlogs["q_bs_0"] == int(out.relay_arrivals[0] - out.dl_departures[0])
    assert out.service_names == ["mu_s_0", "mu_u_0"]


def test_ue2bs_priority_serves_direct_flow_at_full_rate():
    sc = _ss()
    out = run(SimConfig(scenario=sc, policy=2, alpha=ALPHA, horizon=100000, seed=4))
    expected = sc.r1 * sc.links.u.p(1) + sc.r2 * sc.links.u.p(2)
    assert out.empirical_mu[1] == pytest.approx(expected, rel=0.02)


@pytest.mark.slow
def test_empty_probability_and_rates_match_analysis():
    sc = _ss()
    cfg = SimConfig(scenario=sc, policy=1, alpha=ALPHA, horizon=300000, seed=21)
    out = run(cfg)
    mu_s, mu_u, dist = exact_service_rates(sc, 1, ALPHA)
    assert out.pi0_empirical[0] == pytest.approx(dist.pi0, abs=0.02)
    assert out.empirical_mu[0] == pytest.approx(mu_s, rel=0.03)
    assert out.empirical_mu[1] == pytest.approx(mu_u, rel=0.05)
    assert all(out.stability_verdicts.values())


def test_full_buffer_matches_nonempty_rates():
    sc = _ss()
    cfg = SimConfig(scenario=sc, policy=1, alpha=ALPHA, horizon=100000, seed=8, coupling="full_buffer")
    out = run(cfg)
    assert out.pi0_empirical[0] == 0.0
    expected = analytic_rates(cfg)
    assert out.empirical_mu[0] == pytest.approx(expected[0], rel=0.03)
    assert out.empirical_mu[1] == pytest.approx(expected[1], abs=0.003)
    relayed = run(SimConfig(scenario=sc, policy=1, alpha=ALPHA, horizon=100000, seed=8))
    assert relayed.empirical_mu[0] > out.empirical_mu[0]


def test_multi_user_rates_match_analysis():
    sc = _mu()
    policy = MuPolicy(order=(0, 1), n_flows=2)
    cfg = SimConfig(scenario=sc, policy=policy, alpha=(0.3,), horizon=200000, seed=9)
    out = run(cfg)
    expected = service_rates(sc, policy, (0.3,))
    assert out.empirical_mu == pytest.approx(expected, rel=0.03)
    assert out.pi0_empirical[0] == pytest.approx(1 - busy_probability(0.4, 0.7, 0.3), abs=0.02)
    assert analytic_rates(cfg) == pytest.approx(expected)


def test_no_arrivals_stays_empty():
    cfg = SimConfig(
        scenario=_ss(), policy=1, alpha=ALPHA, horizon=20000, arrival_mode="bernoulli", arrival_rates=(0.0, 0.0)
    )
    out = run(cfg)
    assert out.final_backlogs == {"q_s": 0, "q_bs": 0, "q_u": 0}
    assert all(out.stability_verdicts.values())
    assert stability_check(cfg, (0.0, 0.0)) == {"q_s": "stable", "q_bs": "stable", "q_u": "stable"}


def test_trace_file(tmp_path):
    path = tmp_path / "trace.csv"
    cfg = SimConfig(scenario=_ss(), policy=1, alpha=ALPHA, horizon=5000, trace_path=str(path), trace_every=1000)
    run(cfg)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["slot", "q_s", "q_bs", "q_u"]
    assert [int(r[0]) for r in rows[1:]] == [1000, 2000, 3000, 4000, 5000]


def test_independent_streams_per_link():
    sim = SlotSimulator(SimConfig(scenario=_mu(), policy=MuPolicy(order=(0, 1), n_flows=2), alpha=(0.3,), horizon=10))
    assert len(sim._links) == 3
    assert len(sim._arrivals) == 2


def test_classify_slope():
    assert classify_slope(1e-4, 1e-3, 1000) == "stable"
    assert classify_slope(5e-3, 1e-3, 1000) == "unstable"
    with pytest.raises(Inconclusive) as err:
        classify_slope(1e-3, 1e-3, 1000)
    assert err.value.suggested_horizon == 4000
    assert err.value.slope == 1e-3


def test_replicate_runs_each_seed():
    cfg = SimConfig(scenario=_ss(), policy=1, alpha=ALPHA, horizon=3000)
    outcomes = replicate(cfg, [1, 2, 3])
    assert [o.seed for o in outcomes] == [1, 2, 3]
    summary = outcomes[0].summary()
    assert summary.coupling == "relayed"
    assert len(summary.empirical_mu) == 2


@pytest.mark.slow
def test_full_buffer_rates_within_three_sigma():
    """With both queues saturated and the relay never empty every slot is independent"""
    rng = np.random.default_rng(7)
    outside_3, outside_4 = 0, 0
    for i in range(20):
        k = int(rng.integers(1, 4))
        pid = int(rng.integers(1, 7))
        sc = SsScenario(links=random_links(rng), r2=1.0, k=k)
        alpha = tuple(float(a) for a in rng.random(4))
        cfg = SimConfig(scenario=sc, policy=pid, alpha=alpha, horizon=200000, seed=100 + i, coupling="full_buffer")
        out = run(cfg)

        spec = sc.chain(pid, alpha)
        params = sc.params(pid)
        u = sc.links.u
        per_slot = [
            (k * spec.a11, spec.a12),
            (k * u.p(1) * params.Y, u.p(2) * params.Z),
        ]
        n = out.measured_slots
        for (big, small), got in zip(per_slot, out.empirical_mu):
            p_big = big / k
            mean = big + small
            var = k * k * p_big + small - mean ** 2
            sigma = np.sqrt(max(var, 0.0) / n)
            diff = abs(got - mean)
            outside_3 += diff > 3 * sigma + 1e-12
            outside_4 += diff > 4 * sigma + 1e-12
    assert outside_3 <= 1
    assert outside_4 == 0


@pytest.mark.slow
def test_stability_check_separates_loads_near_the_vertex():
    sc = _ss()
    cfg = SimConfig(scenario=sc, policy=1, alpha=ALPHA, horizon=400000, seed=17)
    vertex = analytic_rates(cfg)
    inside = stability_check(cfg, 0.9 * vertex)
    assert set(inside.values()) == {"stable"}
    outside = stability_check(cfg, 1.1 * vertex)
    assert outside["q_s"] == "unstable"
