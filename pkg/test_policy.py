#!/usr/bin/env python3
"""
Tests for the priority policies
"""
import itertools
import math

import pytest

from models.errors import DepthTooLarge, UnknownIndex
from services.policy import (
    SS_POLICY_IDS,
    MuPolicy,
    SsPolicy,
    enumerate_policies,
    policy_count,
    prioritized_sets,
    ss_params,
    ss_winner,
)
from conftest import random_links

STATES = (1, 2, 3)


def _able(state):
    return state if state <= 2 else None


def _params_by_enumeration(pid, links):
    """Re-derive U..Z by resolving every channel outcome with ss_winner"""
    s, u, d = links

    def ue2ue_wins(ue2ue_class):
        return sum(u.p(x) for x in STATES if ss_winner(pid, ue2ue_class, _able(x)) == "ue2ue")

    def ue2bs_wins_empty(u_class):
        return sum(s.p(x) for x in STATES if ss_winner(pid, _able(x), u_class) == "ue2bs")

    def ue2bs_wins_busy(u_class):
        total = 0.0
        for xs, xd in itertools.product(STATES, STATES):
            able = [x for x in (xs, xd) if x <= 2]
            relay_class = min(able) if able else None
            if ss_winner(pid, relay_class, u_class) == "ue2bs":
                total += s.p(xs) * d.p(xd)
        return total

    return (
        ue2ue_wins(1), ue2ue_wins(2),
        ue2bs_wins_empty(1), ue2bs_wins_empty(2),
        ue2bs_wins_busy(1), ue2bs_wins_busy(2),
    )


@pytest.mark.parametrize("pid", SS_POLICY_IDS)
def test_params_agree_with_slot_resolution(rng, pid):
    """Closed-form parameter rows match an exhaustive resolution of the slot contention"""
    for _ in range(5):
        links = random_links(rng)
        params = ss_params(SsPolicy(pid), *links)
        expected = _params_by_enumeration(pid, links)
        got = (params.U, params.V, params.W, params.X, params.Y, params.Z)
        assert got == pytest.approx(expected, abs=1e-12)
        assert params.N == pytest.approx(links.s.p(1) * params.U + links.s.bar(1) * params.V)
        assert params.M == params.U


def test_ue2ue_priority_row(links):
    params = ss_params(SsPolicy(1), *links)
    assert (params.U, params.V, params.N) == (1.0, 1.0, 1.0)
    assert params.W == pytest.approx(links.s.silent)


def test_params_need_three_states(links):
    from services.channel import LinkStateProbs
    two = LinkStateProbs.from_success(0.5)
    with pytest.raises(ValueError):
        ss_params(SsPolicy(1), two, links.u, links.d)


def test_policy_ids():
    assert SsPolicy(3).label == "G3"
    with pytest.raises(ValueError):
        SsPolicy(7)
    with pytest.raises(ValueError):
        ss_winner(9, 1, 1)


def test_winner_without_contention():
    for pid in SS_POLICY_IDS:
        assert ss_winner(pid, None, None) is None
        assert ss_winner(pid, 2, None) == "ue2ue"
        assert ss_winner(pid, None, 1) == "ue2bs"


def test_rate_based_tie_breaks():
    assert ss_winner(5, 2, 2) == "ue2ue"
    assert ss_winner(6, 2, 2) == "ue2bs"
    assert ss_winner(5, 2, 1) == "ue2bs"
    assert ss_winner(6, 1, 2) == "ue2ue"


def test_mu_policy_levels():
    policy = MuPolicy(order=(2, 0, 1), n_flows=3)
    assert policy.level(2) == 1
    assert policy.level(1) == 3
    assert policy.label == "2>0>1"
    assert not policy.is_prefix
    with pytest.raises(UnknownIndex):
        MuPolicy(order=(2, 0), n_flows=3).level(1)


def test_mu_policy_validation():
    with pytest.raises(ValueError):
        MuPolicy(order=(0, 0), n_flows=2)
    with pytest.raises(ValueError):
        MuPolicy(order=(0, 3), n_flows=3)


def test_prioritized_sets():
    policy = MuPolicy(order=(2, 0, 1), n_flows=3)
    assert prioritized_sets(policy, 1, K=2, U=1) == (frozenset({2}), frozenset({0}))
    assert prioritized_sets(policy, 2, K=2, U=1) == (frozenset(), frozenset())
    with pytest.raises(ValueError):
        prioritized_sets(policy, 1, K=1, U=1)


def test_policy_counts():
    assert policy_count(3, 2) == 120
    assert policy_count(3, 2, depth=2) == 20
    assert policy_count(50, 0, depth=3) == 117600
    with pytest.raises(DepthTooLarge):
        policy_count(2, 1, depth=4)


def test_enumeration_is_lazy_and_complete():
    full = list(enumerate_policies(2, 1))
    assert len(full) == policy_count(2, 1)
    assert len({p.order for p in full}) == len(full)

    prefixes = list(enumerate_policies(3, 1, depth=2))
    assert len(prefixes) == policy_count(3, 1, 2)
    assert all(p.is_prefix for p in prefixes)

    big = enumerate_policies(50, 0, depth=3)
    assert next(big).order == (0, 1, 2)

    with pytest.raises(DepthTooLarge):
        list(enumerate_policies(2, 1, depth=0))


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7])
def test_count_laws_hold_exhaustively(n):
    """(K+U)! full orders and (K+U)!/(K+U-d)! prefixes, for every split of n flows"""
    for K in range(n + 1):
        U = n - K
        full = list(enumerate_policies(K, U))
        assert len(full) == policy_count(K, U) == math.factorial(n)
        assert len({p.order for p in full}) == len(full)
        for depth in range(1, n + 1):
            orders = {p.order for p in enumerate_policies(K, U, depth)}
            assert len(orders) == policy_count(K, U, depth) == math.factorial(n) // math.factorial(n - depth)
            assert all(len(o) == depth for o in orders)


def test_depth_three_prefixes_of_fifty_flows():
    assert sum(1 for _ in enumerate_policies(50, 0, depth=3)) == 117600


def test_prioritized_sets_five_flow_example():
    """Three UE2UE and two UE2BS communications; the first UE2BS one is served last"""
    # communications 1, 3, 5 are UE2UE and 2, 4 UE2BS
    index = {1: 0, 3: 1, 5: 2, 2: 3, 4: 4}
    policy = MuPolicy(order=tuple(index[c] for c in (1, 3, 2, 5, 4)), n_flows=5)

    ue2bs, ue2ue = prioritized_sets(policy, index[4], K=3, U=2)
    assert ue2bs == {index[2]}
    assert ue2ue == {index[1], index[3], index[5]}

    ue2bs, ue2ue = prioritized_sets(policy, index[5], K=3, U=2)
    assert ue2bs == {index[2]}
    assert ue2ue == {index[1], index[3]}

    assert prioritized_sets(policy, index[1], K=3, U=2) == (frozenset(), frozenset())


def test_prioritized_sets_without_ue2ue_flows():
    policy = MuPolicy(order=(1, 0, 2), n_flows=3)
    for index in range(3):
        assert prioritized_sets(policy, index, K=0, U=3)[1] == frozenset()
