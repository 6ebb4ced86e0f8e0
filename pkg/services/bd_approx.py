import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from models.errors import Unstable
from services.channel import SsLinks
from services.policy import SsPolicyParams
from services.qbd_exact import ChainSpec, build_chain

logger = logging.getLogger(__name__)

SLACK_TOL = 1e-12
COEF_TOL = 1e-15

AlphaVector = Tuple[float, ...]


@dataclass(frozen=True)
class ApproxChain:
    """Birth-death surrogate of the relay queue; every move carries one packet unit"""
    a0: float
    a1: float
    b: float

    @classmethod
    def from_chain(cls, spec: ChainSpec) -> "ApproxChain":
        k = spec.k
        return cls(
            a0=spec.a02 + k * spec.a01,
            a1=spec.a12 + k * spec.a11,
            b=spec.b12 + k * spec.b11,
        )

    @property
    def stable(self) -> bool:
        return self.a1 < self.b


@dataclass(frozen=True)
class ConstraintCheck:
    satisfied: bool
    slack: float


@dataclass(frozen=True)
class Candidate:
    """Fraction vector generating an approximate-region vertex"""
    alpha: AlphaVector
    family: str


def pi0_closed_form(chain: ApproxChain) -> float:
    """
    Emptiness probability of the birth-death surrogate

    Args:
        chain: Aggregated arrival and service probabilities

    Returns:
        (b - a1) / (b - a1 + a0)
    """
    if chain.a0 <= 0:
        return 1.0
    if not chain.stable:
        raise Unstable(f"surrogate queue unstable: a1={chain.a1:.6g} >= b={chain.b:.6g}")
    return (chain.b - chain.a1) / (chain.b - chain.a1 + chain.a0)


def constraint_terms(params: SsPolicyParams, probs: SsLinks, k: int) -> Tuple[np.ndarray, float]:
    """Coefficients of alpha and right-hand side of the surrogate stability constraint"""
    s, d = probs.s, probs.d
    ps1, ps2 = s.p(1), s.p(2)
    pd1, pd2, pd3 = d.p(1), d.p(2), d.p(3)
    U, V = params.U, params.V

    coeffs = np.array([
        2 * k * ps1 * pd1 * U,
        (k + 1) * ps1 * pd2 * U,
        (k + 1) * ps2 * pd1 * U,
        2 * ps2 * pd2 * V,
    ])
    rhs = k * pd1 * params.M + pd2 * params.N - (k * ps1 * U + ps2 * V) * pd3
    return coeffs, rhs


def alpha_constraint(params: SsPolicyParams, probs: SsLinks, k: int, alpha: Sequence[float]) -> ConstraintCheck:
    """
    Evaluate the fraction-vector constraint keeping the surrogate queue stable

    Args:
        params: Policy parameters
        probs: Link state probabilities
        k: Rate ratio
        alpha: Four-component fraction vector

    Returns:
        ConstraintCheck with slack = rhs - lhs
    """
    if len(alpha) != 4:
        raise ValueError(f"3-UE fraction vector has 4 components, got {len(alpha)}")
    coeffs, rhs = constraint_terms(params, probs, k)
    slack = rhs - float(np.dot(coeffs, alpha))
    return ConstraintCheck(satisfied=slack >= -SLACK_TOL * max(1.0, abs(rhs)), slack=slack)


def candidate_set(params: SsPolicyParams, probs: SsLinks, k: int) -> List[Candidate]:
    """
    Fraction vectors generating the vertices of the approximate region

    The surrogate rates depend on alpha only through (a1, b), and alpha_1 and
    alpha_4 move that point along the same direction. Every vertex of the
    region is then reached by one of:

    - "binary": alpha_1 = alpha_4 = 0 with (alpha_2, alpha_3) binary, or
      alpha_1 = alpha_4 = 1 when that still leaves slack
    - "segment": (alpha_2, alpha_3) binary with both ends of the
      (alpha_1, alpha_4) segment on the active constraint
    - "solved": one of alpha_2, alpha_3 binary, the other solved on the
      active constraint, with alpha_1 = alpha_4 both 0 or both 1

    At most 14 vectors. Components with a zero constraint coefficient change
    no rate and are pinned to 0.

    Args:
        params: Policy parameters
        probs: Link state probabilities
        k: Rate ratio

    Returns:
        Candidates labelled by family; empty when even alpha = 0 is infeasible
    """
    coeffs, rhs = constraint_terms(params, probs, k)
    tol = SLACK_TOL * max(1.0, abs(rhs))
    if rhs < -tol:
        logger.debug(f"constraint infeasible at alpha=0 (rhs={rhs:.3g})")
        return []

    c1, c2, c3, c4 = (float(c) if c > COEF_TOL else 0.0 for c in coeffs)
    ends = c1 + c4
    found = {}

    def add(alpha: Tuple[float, float, float, float], family: str):
        alpha = tuple(float(a) for a in alpha)
        key = tuple(round(a, 12) for a in alpha)
        if key not in found:
            found[key] = Candidate(alpha=alpha, family=family)

    values2 = (0.0, 1.0) if c2 else (0.0,)
    values3 = (0.0, 1.0) if c3 else (0.0,)
    pairs = [(x2, x3) for x2 in values2 for x3 in values3]

    for x2, x3 in pairs:
        if rhs - c2 * x2 - c3 * x3 >= -tol:
            add((0.0, x2, x3, 0.0), "binary")

    for x2, x3 in pairs:
        rho = rhs - c2 * x2 - c3 * x3
        if rho < -tol or ends == 0.0:
            continue
        if rho >= ends - tol:
            add((1.0 if c1 else 0.0, x2, x3, 1.0 if c4 else 0.0), "binary")
            continue
        rho = max(rho, 0.0)
        if c1:
            add((rho / c1, x2, x3, 0.0) if rho <= c1 else (1.0, x2, x3, (rho - c1) / c4), "segment")
        if c4:
            add((0.0, x2, x3, rho / c4) if rho <= c4 else ((rho - c4) / c1, x2, x3, 1.0), "segment")

    for level in (0.0, 1.0):
        if level and ends == 0.0:
            continue
        a1 = level if c1 else 0.0
        a4 = level if c4 else 0.0
        residual = rhs - level * ends
        if c3:
            for x2 in values2:
                t = (residual - c2 * x2) / c3
                if 0.0 < t < 1.0:
                    add((a1, x2, t, a4), "solved")
        if c2:
            for x3 in values3:
                t = (residual - c3 * x3) / c2
                if 0.0 < t < 1.0:
                    add((a1, t, x3, a4), "solved")

    candidates = list(found.values())
    logger.debug(f"{len(candidates)} candidates (rhs={rhs:.3g}, coefficients {coeffs})")
    return candidates


def mu_empty_nonempty(
    params: SsPolicyParams, probs: SsLinks, k: int, alpha: Sequence[float], r2: float = 1.0
) -> Tuple[float, float, float, float]:
    """Service rates of Q_s and Q_u conditioned on the relay queue being empty / nonempty"""
    spec = build_chain(params, probs.s, probs.d, alpha, k)
    r1 = k * r2
    u = probs.u
    mu_s0 = r1 * spec.a01 + r2 * spec.a02
    mu_s1 = r1 * spec.a11 + r2 * spec.a12
    mu_u0 = r1 * u.p(1) * params.W + r2 * u.p(2) * params.X
    mu_u1 = r1 * u.p(1) * params.Y + r2 * u.p(2) * params.Z
    return mu_s0, mu_s1, mu_u0, mu_u1


def approx_service_rates(
    params: SsPolicyParams, probs: SsLinks, k: int, alpha: Sequence[float], r2: float = 1.0
) -> Tuple[float, float]:
    """
    Closed-form service rates under the birth-death surrogate

    Args:
        params: Policy parameters
        probs: Link state probabilities
        k: Rate ratio
        alpha: Four-component fraction vector satisfying the constraint
        r2: Second bit rate (r1 = k * r2)

    Returns:
        (mu_s, mu_u)
    """
    spec = build_chain(params, probs.s, probs.d, alpha, k)
    chain = ApproxChain.from_chain(spec)
    slack = chain.b - chain.a1
    if slack < -SLACK_TOL * max(1.0, chain.b):
        raise Unstable(f"alpha={tuple(alpha)} violates the stability constraint (slack {slack:.3g})")

    mu_s0, mu_s1, mu_u0, mu_u1 = mu_empty_nonempty(params, probs, k, alpha, r2)
    if chain.a0 <= 0:
        return 0.0, mu_u0

    denom = chain.b - chain.a1 + chain.a0
    mu_s = 0.5 * mu_s0 * (1.0 + (chain.b - chain.a0 + chain.a1) / denom)
    mu_u = mu_u0 - (mu_u0 - mu_u1) * chain.a0 / denom
    return mu_s, mu_u
