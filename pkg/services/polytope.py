import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from models.errors import DimensionMismatch

logger = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-9
HULL_MAX_DIM = 8
HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


@dataclass(frozen=True)
class CoSet:
    """Downward-closed sub-convex hull of a finite generator list.

    A point belongs to the set when it is componentwise below some
    combination sum(w_i g_i) with w_i >= 0 and sum(w_i) <= 1.
    """
    generators: np.ndarray

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.generators, dtype=float))
        if g.size == 0:
            raise ValueError("CoSet needs at least one generator")
        if np.any(g < -MEMBERSHIP_TOL):
            raise ValueError(f"generators must be nonnegative, min coordinate {g.min():.3g}")
        g = np.unique(np.round(np.clip(g, 0.0, None), 12), axis=0)
        object.__setattr__(self, "generators", g)

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]]) -> "CoSet":
        return cls(np.array(list(points), dtype=float))

    @property
    def dim(self) -> int:
        return self.generators.shape[1]

    def __len__(self) -> int:
        return self.generators.shape[0]

    @property
    def scale(self) -> float:
        return max(1.0, float(self.generators.max()))

    def scaled(self, factor: float) -> "CoSet":
        if factor < 0:
            raise ValueError(f"scale factor must be nonnegative, got {factor}")
        return CoSet(self.generators * factor)


def _check_dim(s: CoSet, x: np.ndarray):
    if x.shape != (s.dim,):
        raise DimensionMismatch(f"point of shape {x.shape} queried against a {s.dim}-dimensional set")


def violation(s: CoSet, x: Sequence[float], inflation: float = 0.0) -> float:
    """
    Smallest uniform shift t >= 0 with x - (inflation + t) in co(S)

    Args:
        s: Generator set
        x: Query point
        inflation: Componentwise slack granted to x

    Returns:
        Violation distance in the units of the generators, 0 when contained
    """
    x = np.asarray(x, dtype=float)
    _check_dim(s, x)
    target = x - inflation
    G = s.generators

    if np.all(target <= MEMBERSHIP_TOL * s.scale):
        return 0.0
    if np.any(np.all(G >= target - MEMBERSHIP_TOL * s.scale, axis=1)):
        return 0.0

    # work in units of the largest coordinate so HiGHS tolerances are relative
    scale = s.scale
    Gs, ts = G / scale, target / scale
    m, n = Gs.shape
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A_ub = np.zeros((n + 1, m + 1))
    A_ub[:n, :m] = -Gs.T
    A_ub[:n, m] = -1.0
    A_ub[n, :m] = 1.0
    b_ub = np.append(-ts, 1.0)
    bounds = [(0, None)] * (m + 1)

    result = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs", options=HIGHS_OPTIONS)
    if not result.success:
        raise ValueError(f"membership LP failed: {result.message}")
    return max(0.0, float(result.x[-1]) * scale)


def contains(s: CoSet, x: Sequence[float], tol: float = MEMBERSHIP_TOL) -> bool:
    """
    Membership in co(S)

    Args:
        s: Generator set
        x: Query point
        tol: Absolute tolerance relative to max(1, largest generator coordinate)

    Returns:
        True when x is dominated by a generator or a sub-convex combination
    """
    return violation(s, x) <= tol * s.scale


def contains_set(inner: CoSet, outer: CoSet, inflation: float = 0.0) -> float:
    """
    Largest violation of an inner generator against the outer set

    Args:
        inner: Set whose generators are tested
        outer: Reference set
        inflation: Componentwise slack epsilon (R_inner within R_outer + epsilon)

    Returns:
        0 when every inner generator lies in co(outer) + inflation
    """
    if inner.dim != outer.dim:
        raise DimensionMismatch(f"inner set has dimension {inner.dim}, outer {outer.dim}")
    worst = 0.0
    for g in inner.generators:
        worst = max(worst, violation(outer, g, inflation))
    return worst


def _dominance_filter(G: np.ndarray) -> np.ndarray:
    keep = []
    for i, g in enumerate(G):
        ge = np.all(G >= g, axis=1)
        gt = np.any(G > g, axis=1)
        if not np.any(ge & gt):
            keep.append(i)
    return G[keep]


def _hull_prefilter(G: np.ndarray) -> np.ndarray:
    n, d = G.shape
    if d < 2 or d > HULL_MAX_DIM or n <= d + 1:
        return G
    pts = np.vstack((np.zeros(d), G))
    try:
        hull = ConvexHull(pts)
    except (QhullError, ValueError) as e:
        logger.debug(f"hull prefilter skipped: {e}")
        return G
    ids = sorted(i - 1 for i in hull.vertices if i > 0)
    return G[ids]


def reduce(s: CoSet, tol: Optional[float] = None) -> CoSet:
    """
    Drop generators that do not change co(S)

    Args:
        s: Generator set
        tol: Redundancy tolerance, MEMBERSHIP_TOL * scale by default

    Returns:
        CoSet with the same downward-closed hull and no redundant generator
    """
    tol = MEMBERSHIP_TOL * s.scale if tol is None else tol
    G = s.generators
    if len(G) == 1:
        return s
    if s.dim == 1:
        return CoSet(G[[int(np.argmax(G[:, 0]))]])

    start = len(G)
    G = _hull_prefilter(G)
    G = _dominance_filter(G)

    keep = list(range(len(G)))
    for i in range(len(G)):
        others = [j for j in keep if j != i]
        if not others:
            break
        if violation(CoSet(G[others]), G[i]) <= tol:
            keep = others

    reduced = CoSet(G[keep])
    logger.debug(f"reduced {start} generators to {len(reduced)}")
    return reduced
