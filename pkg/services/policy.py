import itertools
import logging
import math
from dataclasses import dataclass
from typing import FrozenSet, Iterator, Optional, Tuple

from models.errors import DepthTooLarge, UnknownIndex
from services.channel import LinkStateProbs

logger = logging.getLogger(__name__)

SS_POLICY_IDS = (1, 2, 3, 4, 5, 6)

SS_POLICY_NAMES = {
    1: "UE2UE priority",
    2: "UE2BS priority",
    3: "UE2UE first at r1, UE2BS first at r2",
    4: "UE2BS first at r1, UE2UE first at r2",
    5: "highest rate first, ties to UE2UE",
    6: "highest rate first, ties to UE2BS",
}


@dataclass(frozen=True)
class SsPolicy:
    """One of the six 3-UE priority policies"""
    id: int

    def __post_init__(self):
        if self.id not in SS_POLICY_IDS:
            raise ValueError(f"3-UE policy id must be in 1..6, got {self.id}")

    @property
    def label(self) -> str:
        return f"G{self.id}"


@dataclass(frozen=True)
class SsPolicyParams:
    """Conditional transmission probabilities of a 3-UE policy

    U, V: UE2UE communication wins the slot when its best able leg is at r1, r2.
    W, X: UE_u transmits at r1, r2 while the relay queue is empty.
    Y, Z: same while the relay queue holds packets.
    """
    U: float
    V: float
    W: float
    X: float
    Y: float
    Z: float
    N: float

    @property
    def M(self) -> float:
        return self.U


def ss_params(
    policy: SsPolicy, probs_s: LinkStateProbs, probs_u: LinkStateProbs, probs_d: LinkStateProbs
) -> SsPolicyParams:
    """
    Evaluate the policy's row of service-rate parameters

    Args:
        policy: 3-UE policy
        probs_s: UE_s uplink state probabilities (3 states)
        probs_u: UE_u uplink state probabilities (3 states)
        probs_d: UE_d downlink state probabilities (3 states)

    Returns:
        SsPolicyParams including N = p_s1*U + (1-p_s1)*V
    """
    for name, probs in (("s", probs_s), ("u", probs_u), ("d", probs_d)):
        if probs.num_states != 3:
            raise ValueError(f"link {name} must have 3 states, got {probs.num_states}")

    ps3, pd3, pu3 = probs_s.silent, probs_d.silent, probs_u.silent
    ps1_bar, pd1_bar, pu1_bar = probs_s.bar(1), probs_d.bar(1), probs_u.bar(1)

    rows = {
        1: (1.0, 1.0, ps3, ps3, ps3 * pd3, ps3 * pd3),
        2: (pu3, pu3, 1.0, 1.0, 1.0, 1.0),
        3: (1.0, pu3, ps1_bar, ps1_bar, ps1_bar * pd1_bar, ps1_bar * pd1_bar),
        4: (pu1_bar, pu1_bar, 1.0, ps3, 1.0, ps3 * pd3),
        5: (1.0, pu1_bar, ps1_bar, ps3, ps1_bar * pd1_bar, ps3 * pd3),
        6: (pu1_bar, pu3, 1.0, ps1_bar, 1.0, ps1_bar * pd1_bar),
    }
    U, V, W, X, Y, Z = rows[policy.id]
    N = probs_s.p(1) * U + ps1_bar * V
    return SsPolicyParams(U=U, V=V, W=W, X=X, Y=Y, Z=Z, N=N)


def ss_winner(policy_id: int, ue2ue_class: Optional[int], ue2bs_class: Optional[int]) -> Optional[str]:
    """
    Resolve one slot's contention under a 3-UE policy

    Args:
        policy_id: 1..6
        ue2ue_class: 1 or 2 for the best rate among the able UE2UE legs, None if neither can transmit
        ue2bs_class: 1 or 2 for UE_u's rate, None if it cannot transmit

    Returns:
        "ue2ue", "ue2bs" or None when nobody transmits
    """
    if ue2ue_class is None:
        return "ue2bs" if ue2bs_class is not None else None
    if ue2bs_class is None:
        return "ue2ue"

    if policy_id == 1:
        return "ue2ue"
    if policy_id == 2:
        return "ue2bs"
    if policy_id == 3:
        return "ue2ue" if ue2ue_class == 1 else "ue2bs"
    if policy_id == 4:
        return "ue2bs" if ue2bs_class == 1 else "ue2ue"
    if policy_id == 5:
        return "ue2ue" if ue2ue_class <= ue2bs_class else "ue2bs"
    if policy_id == 6:
        return "ue2bs" if ue2bs_class <= ue2ue_class else "ue2ue"
    raise ValueError(f"3-UE policy id must be in 1..6, got {policy_id}")


@dataclass(frozen=True)
class MuPolicy:
    """Priority order over multi-user communications.

    UE2UE flows are indices 0..K-1, UE2BS flows K..K+U-1. A prefix order
    lists only the top communications; the rest are never served.
    """
    order: Tuple[int, ...]
    n_flows: int

    def __post_init__(self):
        if len(set(self.order)) != len(self.order):
            raise ValueError(f"duplicate communication in policy order {self.order}")
        if any(i < 0 or i >= self.n_flows for i in self.order):
            raise ValueError(f"policy order {self.order} has indices outside 0..{self.n_flows - 1}")

    @property
    def is_prefix(self) -> bool:
        return len(self.order) < self.n_flows

    def level(self, index: int) -> int:
        """1-based priority level of a communication"""
        try:
            return self.order.index(index) + 1
        except ValueError:
            raise UnknownIndex(f"communication {index} is not in policy {self.order}")

    @property
    def label(self) -> str:
        return ">".join(str(i) for i in self.order)


def prioritized_sets(policy: MuPolicy, index: int, K: int, U: int) -> Tuple[FrozenSet[int], FrozenSet[int]]:
    """
    Split the communications ranked above `index` by type

    Args:
        policy: Priority order
        index: Communication queried
        K: Number of UE2UE communications
        U: Number of UE2BS communications

    Returns:
        (ue2bs_before, ue2ue_before) index sets
    """
    if K + U != policy.n_flows:
        raise ValueError(f"K+U={K + U} does not match policy size {policy.n_flows}")
    before = policy.order[: policy.level(index) - 1]
    ue2bs = frozenset(i for i in before if i >= K)
    ue2ue = frozenset(i for i in before if i < K)
    return ue2bs, ue2ue


def policy_count(K: int, U: int, depth: Optional[int] = None) -> int:
    """(K+U)! full orders, or (K+U)!/(K+U-depth)! prefixes"""
    n = K + U
    if depth is None:
        return math.factorial(n)
    if depth < 1 or depth > n:
        raise DepthTooLarge(f"depth {depth} outside 1..{n}")
    return math.perm(n, depth)


def enumerate_policies(K: int, U: int, depth: Optional[int] = None) -> Iterator[MuPolicy]:
    """
    Lazily yield every priority order (or every prefix of length depth)

    Args:
        K: Number of UE2UE communications
        U: Number of UE2BS communications
        depth: Prefix length K0; full orders when None

    Returns:
        Iterator of MuPolicy
    """
    n = K + U
    if depth is not None and (depth < 1 or depth > n):
        raise DepthTooLarge(f"depth {depth} outside 1..{n} for K={K}, U={U}")
    length = n if depth is None else depth
    for order in itertools.permutations(range(n), length):
        yield MuPolicy(order=order, n_flows=n)
