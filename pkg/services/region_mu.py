import itertools
import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.errors import AlphaInfeasible, ComplexityGuard, ConfigError, EpsilonTooLarge
from models.schemas import RadioConfig, ScenarioDoc
from services.channel import mu_flow_probs, symmetric_probs
from services.policy import MuPolicy, enumerate_policies, policy_count, prioritized_sets
from services.region_ss import RegionVertexSet, VertexLabel

logger = logging.getLogger(__name__)

ALPHA_TOL = 1e-12
CEIL_TOL = 1e-9
DEFAULT_BUDGET = 1e7


@dataclass(frozen=True)
class MuScenario:
    """K relayed UE2UE flows and U direct UE2BS flows, two-rate links (r2 = 0)"""
    K: int
    U: int
    p_s: Tuple[float, ...]
    p_d: Tuple[float, ...]
    p_u: Tuple[float, ...]
    r1: float = 1.0

    def __post_init__(self):
        if self.K < 0 or self.U < 0 or self.K + self.U < 1:
            raise ValueError(f"need K, U >= 0 and K+U >= 1, got K={self.K}, U={self.U}")
        if len(self.p_s) != self.K or len(self.p_d) != self.K or len(self.p_u) != self.U:
            raise ValueError(
                f"probability lists ({len(self.p_s)}, {len(self.p_d)}, {len(self.p_u)}) do not match K={self.K}, U={self.U}"
            )
        for p in (*self.p_s, *self.p_d, *self.p_u):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"success probability {p} outside [0, 1]")
        if not self.r1 > 0:
            raise ValueError(f"r1 must be positive, got {self.r1}")

    @property
    def n_flows(self) -> int:
        return self.K + self.U

    @property
    def is_symmetric(self) -> bool:
        probs = set(self.p_s) | set(self.p_u)
        return len(probs) <= 1 and len(set(self.p_d)) <= 1

    @property
    def common_p_s(self) -> float:
        return self.p_s[0] if self.K else self.p_u[0]

    @classmethod
    def symmetric(cls, K: int, U: int, p_s: float, p_d: float, r1: float = 1.0) -> "MuScenario":
        return cls(K=K, U=U, p_s=(p_s,) * K, p_d=(p_d,) * K, p_u=(p_s,) * U, r1=r1)

    @classmethod
    def from_doc(cls, doc: ScenarioDoc) -> "MuScenario":
        K, U = doc.scenario.K, doc.scenario.U
        geom = doc.geometry
        if geom.symmetric:
            p_s, p_d = symmetric_probs(geom.distance, doc.radio)
            return cls.symmetric(K, U, p_s, p_d, doc.rates.r1)

        flows = geom.flow_distances or []
        ue2bs = geom.ue2bs_distances or []
        if len(flows) != K or len(ue2bs) != U:
            raise ConfigError(
                f"geometry lists {len(flows)} UE2UE and {len(ue2bs)} UE2BS placements, scenario declares K={K}, U={U}",
                ["geometry.flow_distances", "geometry.ue2bs_distances"],
            )
        p_s, p_d, p_u = mu_flow_probs(flows, ue2bs, doc.radio)
        return cls(K=K, U=U, p_s=tuple(p_s), p_d=tuple(p_d), p_u=tuple(p_u), r1=doc.rates.r1)


def _idle(p_s: float, p_d: float) -> bool:
    return p_s <= 0.0 or p_d <= 0.0


def alpha_star_raw(p_s: float, p_d: float) -> Optional[float]:
    """Uplink share balancing the relay queue; None when the flow can never complete"""
    if _idle(p_s, p_d):
        return None
    return (p_d - p_s + p_s * p_d) / (2 * p_s * p_d)


def alpha_star(p_s: float, p_d: float) -> float:
    """Largest usable uplink share, clamped to [0, 1]"""
    raw = alpha_star_raw(p_s, p_d)
    if raw is None:
        return 0.0
    return min(1.0, max(0.0, raw))


def alpha_stars(sc: MuScenario) -> List[float]:
    """Clamped thresholds for every UE2UE flow, logging each clamp"""
    stars = []
    for i, (p_s, p_d) in enumerate(zip(sc.p_s, sc.p_d)):
        raw = alpha_star_raw(p_s, p_d)
        if raw is None:
            logger.info(f"UE2UE flow {i} idle (p_s={p_s:.3g}, p_d={p_d:.3g}), excluded from alpha enumeration")
        elif raw > 1.0:
            logger.warning(f"alpha*_{i}={raw:.4f} clamped to 1, downlink never limits flow {i}")
        elif raw < 0.0:
            logger.warning(f"alpha*_{i}={raw:.4f} < 0, relay queue of flow {i} saturates; alpha pinned to 0")
        stars.append(alpha_star(p_s, p_d))
    return stars


def _denominator(p_s: float, p_d: float, alpha: float) -> float:
    return (1 + p_s) * p_d - 2 * alpha * p_s * p_d


def busy_probability(p_s: float, p_d: float, alpha: float) -> float:
    """Probability that the relay queue of a UE2UE flow holds packets"""
    if _idle(p_s, p_d):
        return 0.0
    return min(1.0, p_s / _denominator(p_s, p_d, alpha))


def own_factor(p_s: float, p_d: float, alpha: float) -> float:
    """Share of the flow's uplink opportunities that carry traffic end to end"""
    if _idle(p_s, p_d):
        return 0.0
    D = _denominator(p_s, p_d, alpha)
    if D <= p_s:
        # saturated relay queue: the downlink throughput is the sustainable rate
        return p_d * (1 - alpha * p_s) / p_s
    return (p_d - alpha * p_s * p_d) / D


def blocking_factor(p_s: float, p_d: float, alpha: float) -> float:
    """Probability that a higher-priority UE2UE flow leaves the slot free"""
    if _idle(p_s, p_d):
        return 1.0
    return (1 - p_s) * (1 - p_d * busy_probability(p_s, p_d, alpha))


def service_rates(sc: MuScenario, policy: MuPolicy, alpha: Sequence[float]) -> np.ndarray:
    """
    Service rates of every queue under a (possibly prefix) priority order

    Args:
        sc: Scenario
        policy: Priority order; flows outside a prefix get rate 0
        alpha: Uplink share per UE2UE flow, each at most alpha*_i

    Returns:
        Array of K+U rates, UE2UE flows first
    """
    if len(alpha) != sc.K:
        raise ValueError(f"alpha has {len(alpha)} components, scenario has K={sc.K}")
    for i, a in enumerate(alpha):
        if a < -ALPHA_TOL or a > alpha_star(sc.p_s[i], sc.p_d[i]) + ALPHA_TOL:
            raise AlphaInfeasible(
                f"alpha_{i}={a:.6g} outside [0, alpha*={alpha_star(sc.p_s[i], sc.p_d[i]):.6g}]"
            )

    free = np.empty(sc.n_flows)
    for i in range(sc.K):
        free[i] = blocking_factor(sc.p_s[i], sc.p_d[i], alpha[i])
    for j in range(sc.U):
        free[sc.K + j] = 1 - sc.p_u[j]

    mu = np.zeros(sc.n_flows)
    for index in policy.order:
        ue2bs_before, ue2ue_before = prioritized_sets(policy, index, sc.K, sc.U)
        clear = float(np.prod([free[m] for m in ue2bs_before | ue2ue_before]))
        if index < sc.K:
            p_s, p_d = sc.p_s[index], sc.p_d[index]
            mu[index] = sc.r1 * p_s * own_factor(p_s, p_d, alpha[index]) * clear
        else:
            mu[index] = sc.r1 * sc.p_u[index - sc.K] * clear
    return mu


def _guard(requested: float, budget: float, what: str):
    if requested > budget:
        raise ComplexityGuard(
            f"{what} needs {requested:.3g} policy x alpha evaluations, budget is {budget:.3g}",
            requested,
            budget,
        )


def _sweep(
    sc: MuScenario,
    policies: Sequence[MuPolicy],
    alpha_choices: Sequence[Sequence[float]],
    family: str,
    prefix_only: bool = False,
) -> RegionVertexSet:
    points, labels = [], []
    for policy in policies:
        choices = alpha_choices
        if prefix_only:
            listed = set(policy.order)
            choices = [c if i in listed else (0.0,) for i, c in enumerate(alpha_choices)]
        for alpha in itertools.product(*choices):
            points.append(service_rates(sc, policy, alpha))
            labels.append(VertexLabel(policy=policy.label, alpha=tuple(float(a) for a in alpha), family=family))
    return RegionVertexSet(
        dim=sc.n_flows, points=np.array(points), labels=labels, evaluated=len(points), policies=len(policies)
    )


def exact_region(sc: MuScenario, grid: int, budget: float = DEFAULT_BUDGET) -> RegionVertexSet:
    """
    Multi-user region over all full priority orders and an alpha grid

    Args:
        sc: Scenario
        grid: Points L per UE2UE flow on [0, alpha*_i]
        budget: Maximum policy x alpha evaluations

    Returns:
        Reduced RegionVertexSet
    """
    if grid < 2:
        raise ValueError(f"grid needs at least 2 points, got {grid}")
    _guard(math.factorial(sc.n_flows) * float(grid) ** sc.K, budget, "exact multi-user region")

    stars = alpha_stars(sc)
    choices = [tuple(np.unique(np.linspace(0.0, s, grid))) for s in stars]
    start = time.time()
    region = _sweep(sc, list(enumerate_policies(sc.K, sc.U)), choices, "grid").reduced()
    logger.info(
        f"Exact multi-user region: {region.evaluated} evaluations, {len(region)} vertices in {time.time() - start:.2f}s"
    )
    return region


def reduced_region(sc: MuScenario, budget: float = DEFAULT_BUDGET) -> RegionVertexSet:
    """
    Multi-user region from border fraction vectors alpha_i in {0, alpha*_i}

    Args:
        sc: Scenario
        budget: Maximum policy x alpha evaluations

    Returns:
        Reduced RegionVertexSet
    """
    _guard(math.factorial(sc.n_flows) * 2.0 ** sc.K, budget, "border-alpha multi-user region")
    choices = [tuple(sorted({0.0, s})) for s in alpha_stars(sc)]
    start = time.time()
    region = _sweep(sc, list(enumerate_policies(sc.K, sc.U)), choices, "border").reduced()
    logger.info(
        f"Border-alpha region: {region.evaluated} evaluations, {len(region)} vertices in {time.time() - start:.2f}s"
    )
    return region


def k0(p_s: float, r1: float, epsilon: float, n_flows: int) -> int:
    """
    Priority depth beyond which a flow's best-case rate is below epsilon

    Args:
        p_s: Common uplink success probability
        r1: Rate
        epsilon: Precision, in rate units
        n_flows: K+U

    Returns:
        min(K+U, ceil(1 + log(eps / (r1 p_s)) / log(1 - p_s)))
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    best = r1 * p_s
    if epsilon >= best:
        raise EpsilonTooLarge(f"epsilon={epsilon:.4g} is not below the best single-flow rate {best:.4g}")
    if p_s >= 1.0:
        return 1
    value = 1 + math.log(epsilon / best) / math.log(1 - p_s)
    return min(n_flows, max(1, math.ceil(value - CEIL_TOL)))


def _canonical_flows(sc: MuScenario, depth: int) -> List[int]:
    return list(range(min(sc.K, depth))) + [sc.K + j for j in range(min(sc.U, depth))]


def epsilon_region(
    sc: MuScenario,
    epsilon: float,
    canonical: bool = False,
    budget: float = DEFAULT_BUDGET,
) -> Tuple[RegionVertexSet, int]:
    """
    Epsilon-approximation of a symmetric multi-user region from prefix orders of depth K0

    Args:
        sc: Symmetric scenario
        epsilon: Precision, in rate units
        canonical: Enumerate one prefix per orbit of flow relabelings; the region is
            the closure of the result under permutations of same-type flows
        budget: Maximum policy x alpha evaluations

    Returns:
        (reduced RegionVertexSet, K0)
    """
    if not sc.is_symmetric:
        raise ValueError("the epsilon approximation needs a symmetric scenario")

    depth = k0(sc.common_p_s, sc.r1, epsilon, sc.n_flows)
    nominal = policy_count(sc.K, sc.U, depth) * 2.0 ** min(depth, sc.K)
    logger.info(
        f"K0={depth} for epsilon={epsilon}: {policy_count(sc.K, sc.U, depth)} prefix orders x 2^{min(depth, sc.K)} "
        f"border vectors = {nominal:.4g} evaluations"
    )

    stars = alpha_stars(sc)
    choices = [tuple(sorted({0.0, s})) for s in stars]
    start = time.time()
    if canonical:
        flows = _canonical_flows(sc, depth)
        policies = [MuPolicy(order=order, n_flows=sc.n_flows) for order in itertools.permutations(flows, depth)]
        _guard(len(policies) * 2.0 ** min(depth, sc.K), budget, "canonical epsilon region")
    else:
        _guard(nominal, budget, "epsilon region")
        policies = list(enumerate_policies(sc.K, sc.U, depth))

    region = _sweep(sc, policies, choices, "prefix", prefix_only=True).reduced()
    region.policies = policy_count(sc.K, sc.U, depth)
    logger.info(f"Epsilon region: {len(region)} vertices in {time.time() - start:.2f}s")
    return region, depth


def convexity_coefficient(p_s: float, p_d: float, lam: float) -> float:
    """
    Weight gamma with F(lam * alpha*) = gamma F(0) + (1 - gamma) F(alpha*)

    Args:
        p_s: Uplink success probability in (0, 1]
        p_d: Downlink success probability in (0, 1]
        lam: Position between 0 and alpha* as a fraction of alpha*

    Returns:
        gamma in [0, 1]
    """
    if not (0 < p_s <= 1 and 0 < p_d <= 1):
        raise ValueError(f"p_s and p_d must be in (0, 1], got {p_s}, {p_d}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    base = (1 + p_s) * p_d
    return base * (1 - lam) / (base - lam * (p_s * p_d + p_d - p_s))


def k0_profile(
    distances: Sequence[float], epsilons: Sequence[float], cfg: RadioConfig, r1: float, n_flows: int
) -> List[Dict]:
    """K0 for every (distance, epsilon) pair of a symmetric placement"""
    rows = []
    for d in distances:
        p_s, p_d = symmetric_probs(d, cfg)
        for eps in epsilons:
            try:
                depth = k0(p_s, r1, eps, n_flows)
            except EpsilonTooLarge as e:
                logger.warning(f"d={d}: {e}")
                depth = None
            rows.append({"distance": d, "epsilon": eps, "p_s": p_s, "p_d": p_d, "k0": depth})
    return rows


def average_service_rate(region: RegionVertexSet) -> float:
    """Per-user average of the largest total service rate over the region's vertices"""
    if len(region) == 0:
        return 0.0
    return float(region.points.sum(axis=1).max()) / region.dim
