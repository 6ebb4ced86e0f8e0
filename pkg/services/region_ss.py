import itertools
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from models.errors import ComplexityGuard, NoInteriorRoot, SingularSystem
from models.schemas import ScenarioDoc, SandwichReport, VertexRecord
from services.bd_approx import (
    ApproxChain,
    approx_service_rates,
    candidate_set,
    mu_empty_nonempty,
)
from services.channel import SsLinks, ss_link_probs
from services.policy import SS_POLICY_IDS, SsPolicy, SsPolicyParams, ss_params
from services.polytope import CoSet, contains_set, reduce
from services.qbd_exact import ChainSpec, StationaryDist, build_chain, solve_stationary

logger = logging.getLogger(__name__)

THREADS_ENV = "RELAY_STABILITY_THREADS"
BOUNDARY_PULL = 1e-6
GAP_TOL = 1e-9


def sweep_workers() -> int:
    """Worker count for sweeps, from RELAY_STABILITY_THREADS (default 1)"""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"Ignoring {THREADS_ENV}={raw!r}, using 1 worker")
        return 1


@dataclass(frozen=True)
class SsScenario:
    """3-UE scenario: UE_s -> BS -> UE_d relayed, UE_u -> BS direct"""
    links: SsLinks
    r2: float
    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"rate ratio k must be a positive integer, got {self.k}")
        if not self.r2 > 0:
            raise ValueError(f"r2 must be positive, got {self.r2}")

    @property
    def r1(self) -> float:
        return self.k * self.r2

    def params(self, policy_id: int) -> SsPolicyParams:
        return ss_params(SsPolicy(policy_id), self.links.s, self.links.u, self.links.d)

    def chain(self, policy_id: int, alpha: Sequence[float]) -> ChainSpec:
        return build_chain(self.params(policy_id), self.links.s, self.links.d, alpha, self.k)

    @classmethod
    def from_doc(cls, doc: ScenarioDoc) -> "SsScenario":
        d_s, d_u, d_d = doc.geometry.ss_distances()
        links = ss_link_probs(d_s, d_u, d_d, doc.radio)
        return cls(links=links, r2=doc.rates.r2, k=doc.rates.k)


@dataclass(frozen=True)
class VertexLabel:
    """Provenance of a region point"""
    policy: str
    alpha: Tuple[float, ...]
    family: str = "grid"


@dataclass
class RegionVertexSet:
    """Service-rate points of a region with the (policy, alpha) that generated each"""
    dim: int
    points: np.ndarray
    labels: List[VertexLabel]
    evaluated: int = 0
    skipped: int = 0
    policies: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, self.dim)
        if len(self.points) != len(self.labels):
            raise ValueError(f"{len(self.points)} points but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.points)

    def coset(self) -> CoSet:
        if len(self.points) == 0:
            return CoSet(np.zeros((1, self.dim)))
        return CoSet(self.points)

    def reduced(self) -> "RegionVertexSet":
        """Keep only the points that span the downward-closed hull"""
        if len(self.points) == 0:
            return self
        kept = {tuple(np.round(g, 12)) for g in reduce(self.coset()).generators}
        points, labels, seen = [], [], set()
        for p, label in zip(self.points, self.labels):
            key = tuple(np.round(np.clip(p, 0.0, None), 12))
            if key in kept and key not in seen:
                seen.add(key)
                points.append(p)
                labels.append(label)
        return RegionVertexSet(
            dim=self.dim,
            points=np.array(points),
            labels=labels,
            evaluated=self.evaluated,
            skipped=self.skipped,
            policies=self.policies,
        )

    def records(self) -> List[VertexRecord]:
        return [
            VertexRecord(policy=lab.policy, alpha=list(lab.alpha), mu=[float(v) for v in p])
            for p, lab in zip(self.points, self.labels)
        ]

    @classmethod
    def merge(cls, parts: Sequence["RegionVertexSet"], dim: int) -> "RegionVertexSet":
        parts = [p for p in parts if p is not None]
        points = [p.points for p in parts if len(p)]
        return cls(
            dim=dim,
            points=np.vstack(points) if points else np.zeros((0, dim)),
            labels=[lab for p in parts for lab in p.labels],
            evaluated=sum(p.evaluated for p in parts),
            skipped=sum(p.skipped for p in parts),
            policies=sum(p.policies for p in parts),
        )


def exact_service_rates(sc: SsScenario, policy_id: int, alpha: Sequence[float]) -> Tuple[float, float, StationaryDist]:
    """
    Service rates of Q_s and Q_u weighted by the exact relay-queue emptiness

    Args:
        sc: Scenario
        policy_id: 3-UE policy 1..6
        alpha: Four-component fraction vector

    Returns:
        (mu_s, mu_u, stationary distribution of Q_BS)
    """
    params = sc.params(policy_id)
    spec = build_chain(params, sc.links.s, sc.links.d, alpha, sc.k)
    dist = solve_stationary(spec)
    mu_s0, mu_s1, mu_u0, mu_u1 = mu_empty_nonempty(params, sc.links, sc.k, alpha, sc.r2)
    pi0 = dist.pi0
    return pi0 * mu_s0 + (1 - pi0) * mu_s1, pi0 * mu_u0 + (1 - pi0) * mu_u1, dist


def _alpha_grid(grid: int) -> Iterable[Tuple[float, ...]]:
    if grid < 2:
        raise ValueError(f"grid needs at least 2 points per dimension, got {grid}")
    axis = np.linspace(0.0, 1.0, grid)
    return itertools.product(axis, repeat=4)


def _policy_ids(policies: Optional[Sequence[int]]) -> List[int]:
    ids = list(SS_POLICY_IDS if policies is None else policies)
    for pid in ids:
        SsPolicy(pid)
    return ids


def _sweep_policy(sc: SsScenario, policy_id: int, alphas: List[Tuple[float, ...]]) -> RegionVertexSet:
    params = sc.params(policy_id)
    label = SsPolicy(policy_id).label
    cache: Dict[Tuple[float, ...], Optional[Tuple[float, float]]] = {}
    points, labels = [], []
    skipped = 0

    for alpha in alphas:
        spec = build_chain(params, sc.links.s, sc.links.d, alpha, sc.k)
        mu_s0, mu_s1, mu_u0, mu_u1 = mu_empty_nonempty(params, sc.links, sc.k, alpha, sc.r2)
        key = (spec.a11, spec.a12, spec.b11, spec.b12, mu_s1, mu_u1)
        if key not in cache:
            try:
                pi0 = solve_stationary(spec).pi0
                cache[key] = (pi0 * mu_s0 + (1 - pi0) * mu_s1, pi0 * mu_u0 + (1 - pi0) * mu_u1)
            except (NoInteriorRoot, SingularSystem) as e:
                logger.debug(f"{label} alpha={tuple(round(a, 4) for a in alpha)} skipped: {e} (drift {spec.drift:.3g})")
                cache[key] = None
        value = cache[key]
        if value is None:
            skipped += 1
            continue
        points.append(value)
        labels.append(VertexLabel(policy=label, alpha=tuple(float(a) for a in alpha)))

    return RegionVertexSet(
        dim=2,
        points=np.array(points),
        labels=labels,
        evaluated=len(alphas),
        skipped=skipped,
        policies=1,
    )


def exact_region(
    sc: SsScenario,
    grid: int,
    extra_alphas: Optional[Dict[int, List[Tuple[float, ...]]]] = None,
    policies: Optional[Sequence[int]] = None,
    budget: Optional[float] = None,
) -> RegionVertexSet:
    """
    Exact 3-UE stability region from the quasi-birth-death relay queue

    Args:
        sc: Scenario
        grid: Grid points L per alpha dimension (L^4 vectors per policy)
        extra_alphas: Additional fraction vectors per policy id
        policies: Policy subset, all six by default
        budget: Maximum policy x alpha evaluations, unlimited when None

    Returns:
        Reduced RegionVertexSet; unstable grid points are skipped
    """
    ids = _policy_ids(policies)
    requested = len(ids) * grid ** 4
    if budget is not None and requested > budget:
        raise ComplexityGuard(
            f"exact 3-UE region needs {requested:.3g} evaluations, budget is {budget:.3g}", requested, budget
        )
    base = list(_alpha_grid(grid))
    extra_alphas = extra_alphas or {}
    logger.info(f"Exact 3-UE sweep: {len(ids)} policies x {len(base)} fraction vectors (k={sc.k})")
    start = time.time()

    try:
        jobs = [(pid, base + list(extra_alphas.get(pid, []))) for pid in ids]
        workers = sweep_workers()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(lambda job: _sweep_policy(sc, *job), jobs))
        else:
            parts = [_sweep_policy(sc, pid, alphas) for pid, alphas in jobs]
        region = RegionVertexSet.merge(parts, dim=2).reduced()
    except Exception as e:
        logger.error(f"Exact 3-UE sweep failed: {e}")
        raise

    logger.info(
        f"Exact 3-UE sweep done: {len(region)} vertices, {region.skipped} unstable points skipped "
        f"in {time.time() - start:.2f}s"
    )
    return region


def approx_region(sc: SsScenario, policies: Optional[Sequence[int]] = None) -> RegionVertexSet:
    """
    Approximate region from the birth-death surrogate at the candidate fraction vectors

    Args:
        sc: Scenario
        policies: Policy subset, all six by default

    Returns:
        Reduced RegionVertexSet labelled with policy, alpha and candidate family
    """
    points, labels = [], []
    evaluated = 0
    ids = _policy_ids(policies)
    for pid in ids:
        params = sc.params(pid)
        label = SsPolicy(pid).label
        for cand in candidate_set(params, sc.links, sc.k):
            evaluated += 1
            mu_s, mu_u = approx_service_rates(params, sc.links, sc.k, cand.alpha, sc.r2)
            points.append((mu_s, mu_u))
            labels.append(VertexLabel(policy=label, alpha=cand.alpha, family=cand.family))

    region = RegionVertexSet(
        dim=2, points=np.array(points), labels=labels, evaluated=evaluated, policies=len(ids)
    ).reduced()
    logger.info(f"Approximate 3-UE region: {evaluated} candidates, {len(region)} vertices")
    return region


def coupling_free_region(sc: SsScenario, grid: int, policies: Optional[Sequence[int]] = None) -> RegionVertexSet:
    """Region when Q_BS is treated as never empty (no queue coupling)"""
    points, labels = [], []
    ids = _policy_ids(policies)
    alphas = list(_alpha_grid(grid))
    for pid in ids:
        params = sc.params(pid)
        label = SsPolicy(pid).label
        for alpha in alphas:
            _, mu_s1, _, mu_u1 = mu_empty_nonempty(params, sc.links, sc.k, alpha, sc.r2)
            points.append((mu_s1, mu_u1))
            labels.append(VertexLabel(policy=label, alpha=tuple(float(a) for a in alpha), family="full_buffer"))
    return RegionVertexSet(
        dim=2, points=np.array(points), labels=labels, evaluated=len(points), policies=len(ids)
    ).reduced()


def relative_error(spec: ChainSpec, dist: StationaryDist) -> float:
    """
    Signed relative source-rate gap (mu~_s - mu_s) / mu~_s at one fraction vector

    Zero mean drift of the exact chain gives
    Pi~0 - Pi0 = k b11 (Pi_1 + ... + Pi_{k-1}) / (b - a1 + a0),
    so the gap is k b11 S (a0 - a1) / (a0 b) with S that partial sum.
    Negative where a1 > a0: the exact chain then serves UE_s faster.
    """
    chain = ApproxChain.from_chain(spec)
    if chain.a0 <= 0 or chain.b <= 0:
        return 0.0
    k = spec.k
    wasted = sum(dist.pi(i) for i in range(1, k))
    return k * spec.b11 * wasted * (chain.a0 - chain.a1) / (chain.a0 * chain.b)


@dataclass(frozen=True)
class GapPoint:
    """Exact and surrogate rates at one (policy, alpha)"""
    policy_id: int
    alpha: Tuple[float, ...]
    exact: Tuple[float, float]
    approx: Tuple[float, float]
    predicted: Tuple[float, float]

    @property
    def measured(self) -> Tuple[float, float]:
        return tuple((a - e) / a if a > 0 else 0.0 for a, e in zip(self.approx, self.exact))

    @property
    def dominated(self) -> bool:
        return all(a >= e - GAP_TOL * max(1.0, a) for a, e in zip(self.approx, self.exact))


def gap_point(sc: SsScenario, policy_id: int, alpha: Sequence[float]) -> Optional[GapPoint]:
    """
    Compare the exact and surrogate rates at one fraction vector

    Args:
        sc: Scenario
        policy_id: 3-UE policy 1..6
        alpha: Four-component fraction vector

    Returns:
        GapPoint with the predicted gaps of both rates; None on or beyond the
        stability boundary or when the exact chain cannot be solved
    """
    params = sc.params(policy_id)
    spec = build_chain(params, sc.links.s, sc.links.d, alpha, sc.k)
    if spec.drift <= 1e-12:
        return None
    try:
        mu_s, mu_u, dist = exact_service_rates(sc, policy_id, alpha)
    except (NoInteriorRoot, SingularSystem):
        return None

    mu_s_approx, mu_u_approx = approx_service_rates(params, sc.links, sc.k, alpha, sc.r2)
    _, _, mu_u0, mu_u1 = mu_empty_nonempty(params, sc.links, sc.k, alpha, sc.r2)
    chain = ApproxChain.from_chain(spec)
    wasted = sum(dist.pi(i) for i in range(1, sc.k))
    pi0_gap = sc.k * spec.b11 * wasted / (chain.b - chain.a1 + chain.a0)
    gap_u = pi0_gap * (mu_u0 - mu_u1) / mu_u_approx if mu_u_approx > 0 else 0.0
    return GapPoint(
        policy_id=policy_id,
        alpha=tuple(float(a) for a in alpha),
        exact=(mu_s, mu_u),
        approx=(mu_s_approx, mu_u_approx),
        predicted=(relative_error(spec, dist), gap_u),
    )


def _gap_points(sc: SsScenario, alphas_by_policy: Dict[int, List[Tuple[float, ...]]]) -> List[GapPoint]:
    points = []
    for pid, alphas in alphas_by_policy.items():
        for alpha in alphas:
            point = gap_point(sc, pid, alpha)
            if point is not None:
                points.append(point)
    return points


def pulled_candidates(sc: SsScenario, policy_id: int) -> List[Tuple[float, ...]]:
    """Candidate fraction vectors scaled by 1 - BOUNDARY_PULL, strictly inside the stable set"""
    cands = candidate_set(sc.params(policy_id), sc.links, sc.k)
    return [tuple(a * (1.0 - BOUNDARY_PULL) for a in c.alpha) for c in cands]


def error_bound_by_policy(
    sc: SsScenario,
    policies: Optional[Sequence[int]] = None,
    alphas: Optional[Sequence[Sequence[float]]] = None,
) -> Dict[int, float]:
    """
    Largest predicted relative gap per policy

    Args:
        sc: Scenario
        policies: Policy subset, all six by default
        alphas: Fraction vectors evaluated besides the pulled-in candidates

    Returns:
        Policy id -> max(0, largest gap of either rate)
    """
    extra = [tuple(a) for a in alphas or []]
    bounds = {}
    for pid in _policy_ids(policies):
        points = _gap_points(sc, {pid: pulled_candidates(sc, pid) + extra})
        bounds[pid] = max([0.0] + [max(p.predicted) for p in points])
    return bounds


def error_bound(
    sc: SsScenario,
    policies: Optional[Sequence[int]] = None,
    alphas: Optional[Sequence[Sequence[float]]] = None,
) -> float:
    """
    Relative error bound between the exact and approximate regions

    Args:
        sc: Scenario
        policies: Policy subset, all six by default
        alphas: Fraction vectors evaluated besides the pulled-in candidates

    Returns:
        Largest per-policy gap, 0 when k = 1
    """
    return max(error_bound_by_policy(sc, policies, alphas).values())


def measured_gap(sc: SsScenario, alphas: Sequence[Sequence[float]], policies: Optional[Sequence[int]] = None) -> float:
    """Largest (mu~ - mu) / mu~ of either rate over the given fraction vectors"""
    alphas = [tuple(a) for a in alphas]
    points = _gap_points(sc, {pid: alphas for pid in _policy_ids(policies)})
    return max([0.0] + [max(p.measured) for p in points])


def sandwich_regions(
    sc: SsScenario,
    grid: int,
    policies: Optional[Sequence[int]] = None,
    rel_tol: float = 1e-5,
) -> Tuple[RegionVertexSet, RegionVertexSet, SandwichReport]:
    """
    Check (1 - eps) R~ within R within R~ on a grid

    The outer check uses the exact points the surrogate dominates in both
    rates; the others are counted in reversed_points. The inner check
    shrinks the surrogate rates at the pulled-in candidates by eps.

    Args:
        sc: Scenario
        grid: Exact-sweep resolution
        policies: Policy subset, all six by default
        rel_tol: Violation tolerance relative to the largest rate

    Returns:
        (exact region, approximate region, SandwichReport)
    """
    ids = _policy_ids(policies)
    approx = approx_region(sc, ids)
    extras = {pid: pulled_candidates(sc, pid) for pid in ids}
    exact = exact_region(sc, grid, extra_alphas=extras, policies=ids)

    grid_alphas = list(_alpha_grid(grid))
    try:
        points = _gap_points(sc, {pid: grid_alphas + extras[pid] for pid in ids})
    except Exception as e:
        logger.error(f"Gap scan failed: {e}")
        raise

    eps = max([0.0] + [max(p.predicted) for p in points])
    gap = max([0.0] + [max(p.measured) for p in points])
    dominated = [p.exact for p in points if p.dominated]
    reversed_points = len(points) - len(dominated)
    if reversed_points:
        logger.warning(f"{reversed_points} points where the approximation undercuts an exact rate")

    outer = contains_set(CoSet.from_points(dominated or [(0.0, 0.0)]), approx.coset())
    shrunk = [
        tuple((1.0 - eps) * v for v in approx_service_rates(sc.params(pid), sc.links, sc.k, alpha, sc.r2))
        for pid in ids
        for alpha in extras[pid]
    ]
    inner = contains_set(CoSet.from_points(shrunk or [(0.0, 0.0)]), exact.coset())

    scale = max(1.0, float(approx.coset().generators.max()))
    report = SandwichReport(
        epsilon_bound=eps,
        measured_gap=gap,
        outer_violation=outer,
        inner_violation=inner,
        reversed_points=reversed_points,
        tolerance=rel_tol * scale,
    )
    logger.info(
        f"Sandwich: eps={eps:.3e} gap={gap:.3e} outer={outer:.2e} inner={inner:.2e} "
        f"(tol {report.tolerance:.1e})"
    )
    return exact, approx, report


def sandwich_check(
    sc: SsScenario, grid: int, policies: Optional[Sequence[int]] = None, rel_tol: float = 1e-5
) -> SandwichReport:
    """Two-sided containment report between the exact and approximate regions"""
    return sandwich_regions(sc, grid, policies, rel_tol)[2]
