import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from models.errors import NoInteriorRoot, SingularSystem
from services.channel import LinkStateProbs
from services.policy import SsPolicyParams

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12
DRIFT_TOL = 1e-12
UNIT_DISK = 1.0 - 1e-9
ZERO_ROOT = 1e-12
MULTIPLE_ROOT = 1e-7
RESIDUAL_TOL = 1e-9
COND_WARNING = 1e10


@dataclass(frozen=True)
class ChainSpec:
    """Transition probabilities of the relay queue, in packet units of r2.

    From state 0 the queue grows by k (a01) or 1 (a02). From n >= 1 it grows
    by k (a11) or 1 (a12), shrinks by 1 (b12), and shrinks by k (b11) only
    when at least k units are buffered. Below k an r1 downlink grant carries
    nothing (self-loop), so states 1..k-1 drain only through b12 and Pi0 can
    be much smaller than the birth-death surrogate's for k > 1.
    """
    a01: float
    a02: float
    a11: float
    a12: float
    b11: float
    b12: float
    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"rate ratio k must be a positive integer, got {self.k}")
        values = (self.a01, self.a02, self.a11, self.a12, self.b11, self.b12)
        if any(v < -PROB_TOL or v > 1 + PROB_TOL for v in values):
            raise ValueError(f"chain probabilities out of [0, 1]: {values}")
        if self.a01 + self.a02 > 1 + PROB_TOL:
            raise ValueError("a01 + a02 exceeds 1")
        if self.a11 + self.a12 + self.b11 + self.b12 > 1 + PROB_TOL:
            raise ValueError("a11 + a12 + b11 + b12 exceeds 1")

    @property
    def a0(self) -> float:
        return self.a01 + self.a02

    @property
    def a1(self) -> float:
        return self.a11 + self.a12

    @property
    def b1(self) -> float:
        return self.b11 + self.b12

    @property
    def drift(self) -> float:
        """Mean downward minus upward movement per slot in a busy state"""
        return self.b12 + self.k * self.b11 - self.a12 - self.k * self.a11


def build_chain(
    params: SsPolicyParams,
    probs_s: LinkStateProbs,
    probs_d: LinkStateProbs,
    alpha: Sequence[float],
    k: int,
) -> ChainSpec:
    """
    Relay-queue chain of a 3-UE policy for a fraction vector

    Args:
        params: Policy parameters U, V, N
        probs_s: UE_s uplink state probabilities
        probs_d: UE_d downlink state probabilities
        alpha: (a1, a2, a3, a4) uplink shares for state pairs (S1,S1), (S1,S2), (S2,S1), (S2,S2)
        k: Rate ratio r1 / r2

    Returns:
        ChainSpec
    """
    al1, al2, al3, al4 = alpha
    U, V, N = params.U, params.V, params.N
    ps1, ps2 = probs_s.p(1), probs_s.p(2)
    pd1, pd2, pd3 = probs_d.p(1), probs_d.p(2), probs_d.p(3)

    return ChainSpec(
        a01=ps1 * U,
        a02=ps2 * V,
        a11=ps1 * (al1 * pd1 + al2 * pd2 + pd3) * U,
        a12=ps2 * (al3 * pd1 * U + al4 * pd2 * V + pd3 * V),
        b11=pd1 * (1.0 - al1 * ps1 - al3 * ps2) * U,
        b12=pd2 * (N - al2 * ps1 * U - al4 * ps2 * V),
        k=k,
    )


@dataclass
class StationaryDist:
    """Stationary law: explicit boundary states plus a root expansion for n > k"""
    head: np.ndarray
    roots: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    @property
    def k(self) -> int:
        return len(self.head) - 1

    @property
    def pi0(self) -> float:
        return float(self.head[0])

    def pi(self, n: int) -> float:
        if n < 0:
            return 0.0
        if n <= self.k:
            return float(self.head[n])
        return float(np.real(np.sum(self.coeffs * self.roots ** n)))

    def pi_complex(self, n: int) -> complex:
        if n <= self.k:
            return complex(self.head[n])
        return complex(np.sum(self.coeffs * self.roots ** n))

    def tail_mass(self) -> float:
        """Sum of Pi_n over n > k via geometric sums"""
        if self.roots.size == 0:
            return 0.0
        x = self.roots
        return float(np.real(np.sum(self.coeffs * x ** (self.k + 1) / (1.0 - x))))

    def total_mass(self) -> float:
        return float(np.sum(self.head)) + self.tail_mass()

    def mean_backlog(self) -> float:
        """Mean queue length in r2 packet units"""
        head = float(np.dot(np.arange(self.k + 1), self.head))
        if self.roots.size == 0:
            return head
        m = self.k + 1
        x = self.roots
        tail = self.coeffs * x ** m * (m - (m - 1) * x) / (1.0 - x) ** 2
        return head + float(np.real(np.sum(tail)))


def cofactor_coefficients(spec: ChainSpec) -> np.ndarray:
    """
    Coefficients (ascending powers) of P(x) / (x - 1)

    P(x) = b11 x^2k + b12 x^(k+1) - (a1+b1) x^k + a12 x^(k-1) + a11 is the
    characteristic polynomial of the busy-state balance equations.
    """
    k = spec.k
    c = np.zeros(2 * k)
    c[:k] -= spec.a11
    c[k - 1] -= spec.a12
    c[k] += spec.b12
    c[k:] += spec.b11
    return c


def characteristic_roots(spec: ChainSpec) -> np.ndarray:
    """
    Roots of the cofactor polynomial strictly inside the unit disk

    Args:
        spec: Chain specification

    Returns:
        Complex array of interior roots
    """
    drift = spec.drift
    if drift <= DRIFT_TOL:
        raise NoInteriorRoot(f"relay queue drift {drift:.3g} is not negative, chain cannot be normalized", drift)

    coeffs = cofactor_coefficients(spec)
    roots = np.roots(coeffs[::-1])
    interior = roots[np.abs(roots) < UNIT_DISK]
    if interior.size == 0:
        raise NoInteriorRoot(f"no root inside the unit disk (drift {drift:.3g})", drift)
    return interior


def _balance_row(spec: ChainSpec, i: int, roots: np.ndarray) -> np.ndarray:
    """Balance equation i as inflow - outflow over the unknowns (Pi_0..Pi_k, c_1..c_R)"""
    k = spec.k
    width = k + 1 + roots.size
    row = np.zeros(width, dtype=complex)

    def add(n: int, weight: float):
        if n <= k:
            row[n] += weight
        else:
            row[k + 1:] += weight * roots ** n

    if i == 0:
        out = spec.a0
    elif i < k:
        out = spec.a1 + spec.b12
    else:
        out = spec.a1 + spec.b1
    add(i, -out)

    if i >= 1:
        add(i - 1, spec.a02 if i - 1 == 0 else spec.a12)
    if i >= k:
        add(i - k, spec.a01 if i - k == 0 else spec.a11)
    add(i + 1, spec.b12)
    add(i + k, spec.b11)
    return row


def _normalization_row(k: int, roots: np.ndarray) -> np.ndarray:
    row = np.zeros(k + 1 + roots.size, dtype=complex)
    row[: k + 1] = 1.0
    row[k + 1:] = roots ** (k + 1) / (1.0 - roots)
    return row


def balance_residuals(spec: ChainSpec, dist: StationaryDist, upto: int) -> np.ndarray:
    """Residuals of balance equations 0..upto evaluated on a solved distribution"""
    k = spec.k
    pi = np.array([dist.pi(n) for n in range(upto + k + 2)])
    res = np.zeros(upto + 1)
    for i in range(upto + 1):
        if i == 0:
            out = spec.a0
        elif i < k:
            out = spec.a1 + spec.b12
        else:
            out = spec.a1 + spec.b1
        inflow = spec.b12 * pi[i + 1] + spec.b11 * pi[i + k]
        if i >= 1:
            inflow += (spec.a02 if i == 1 else spec.a12) * pi[i - 1]
        if i >= k:
            inflow += (spec.a01 if i == k else spec.a11) * pi[i - k]
        res[i] = inflow - out * pi[i]
    return res


def solve_stationary(spec: ChainSpec) -> StationaryDist:
    """
    Stationary distribution of the relay queue

    Args:
        spec: Chain specification

    Returns:
        StationaryDist with Pi_0..Pi_k and the root expansion of the tail
    """
    k = spec.k
    if spec.a0 <= PROB_TOL:
        head = np.zeros(k + 1)
        head[0] = 1.0
        return StationaryDist(head=head)

    roots = characteristic_roots(spec)
    roots = roots[np.abs(roots) > ZERO_ROOT]
    if roots.size > 1:
        gaps = np.abs(roots[:, None] - roots[None, :]) + np.eye(roots.size)
        if gaps.min() < MULTIPLE_ROOT:
            raise SingularSystem(f"near-multiple roots (gap {gaps.min():.2e})")

    R = roots.size
    if R == k:
        rows = [_balance_row(spec, i, roots) for i in range(R + k)]
    else:
        rows = [_balance_row(spec, i, roots) for i in range(2 * k + 1)]
    rows.append(_normalization_row(k, roots))
    A = np.array(rows)
    rhs = np.zeros(A.shape[0], dtype=complex)
    rhs[-1] = 1.0

    try:
        if A.shape[0] == A.shape[1]:
            cond = np.linalg.cond(A)
            if cond > COND_WARNING:
                logger.warning(f"boundary system ill-conditioned (cond={cond:.2e}, k={k}, R={R})")
            z = np.linalg.solve(A, rhs)
        else:
            z, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
            if rank < A.shape[1]:
                raise SingularSystem(f"boundary system rank {rank} < {A.shape[1]} unknowns")
    except np.linalg.LinAlgError as e:
        raise SingularSystem(f"boundary system singular: {e}") from e

    head = z[: k + 1]
    if np.max(np.abs(head.imag)) > 1e-9:
        raise SingularSystem(f"boundary probabilities not real (imag {np.max(np.abs(head.imag)):.2e})")
    dist = StationaryDist(head=head.real.copy(), roots=roots, coeffs=z[k + 1:])

    residual = np.max(np.abs(balance_residuals(spec, dist, 2 * k + 2)))
    if residual > RESIDUAL_TOL:
        raise SingularSystem(f"balance residual {residual:.2e} above {RESIDUAL_TOL}")

    tail_imag = max(abs(dist.pi_complex(n).imag) for n in range(k + 1, 2 * k + 3))
    if tail_imag > 1e-9:
        raise SingularSystem(f"tail probabilities not real (imag {tail_imag:.2e})")

    return dist


def pi0_identity_check(spec: ChainSpec, dist: StationaryDist) -> float:
    """
    Residual of Pi_0 = Pi~_0 - k b11 sum_{n=1}^{k-1} Pi_n / (b - a1 + a0)

    Aggregates a0, a1, b count packet units per slot; Pi~_0 is the
    birth-death emptiness probability built from them.
    """
    k = spec.k
    a0 = spec.a02 + k * spec.a01
    a1 = spec.a12 + k * spec.a11
    b = spec.b12 + k * spec.b11
    denom = b - a1 + a0
    pi0_approx = (b - a1) / denom if a0 > 0 else 1.0
    wasted = k * spec.b11 * sum(dist.pi(n) for n in range(1, k))
    rhs = pi0_approx - wasted / denom if a0 > 0 else 1.0
    return abs(dist.pi0 - rhs)


def truncated_chain_matrix(spec: ChainSpec, n_states: int = 400) -> np.ndarray:
    """Dense transition matrix truncated at n_states; blocked arrivals stay put"""
    k = spec.k
    P = np.zeros((n_states, n_states))
    for n in range(n_states):
        if n == 0:
            moves = ((k, spec.a01), (1, spec.a02))
        else:
            moves = [(k, spec.a11), (1, spec.a12), (-1, spec.b12)]
            if n >= k:
                moves.append((-k, spec.b11))
        for jump, prob in moves:
            target = n + jump
            if 0 <= target < n_states and prob > 0:
                P[n, target] += prob
        P[n, n] += 1.0 - P[n].sum()
    return P


def power_stationary(P: np.ndarray, tol: float = 1e-12, maxit: int = 80) -> np.ndarray:
    """Find the stationary distribution by repeated squaring of the transition matrix"""
    Q = P.copy()
    for _ in range(maxit):
        Q_new = Q @ Q
        if np.max(np.abs(Q_new - Q)) < tol:
            break
        Q = Q_new
    else:
        raise ValueError("No convergence to stationary distribution!")

    pi = Q_new[0]
    return pi / pi.sum()
