import logging
from dataclasses import dataclass
from typing import Literal, NamedTuple, Sequence, Tuple

import numpy as np

from models.errors import NonDecreasingThresholds
from models.schemas import RadioConfig

logger = logging.getLogger(__name__)

Direction = Literal["uplink", "downlink"]


@dataclass(frozen=True)
class LinkGeometry:
    """Distance and direction of one radio link"""
    distance: float
    direction: Direction = "uplink"

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError(f"Link distance must be positive, got {self.distance}")
        if self.direction not in ("uplink", "downlink"):
            raise ValueError(f"Unknown link direction: {self.direction}")


@dataclass(frozen=True)
class LinkStateProbs:
    """Probability of each SNR state, best state first"""
    probs: Tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("A link needs at least two SNR states")
        if np.any(p < -1e-15) or np.any(p > 1 + 1e-15):
            raise ValueError(f"State probabilities out of [0, 1]: {self.probs}")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"State probabilities sum to {p.sum()}, expected 1")

    @property
    def num_states(self) -> int:
        return len(self.probs)

    def p(self, n: int) -> float:
        """Probability of state n (1-based, matching the rate index)"""
        return self.probs[n - 1]

    def bar(self, n: int) -> float:
        return 1.0 - self.probs[n - 1]

    @property
    def silent(self) -> float:
        """Probability of the zero-rate state"""
        return self.probs[-1]

    @classmethod
    def from_success(cls, p_success: float) -> "LinkStateProbs":
        """Two-state link: rate r1 with probability p_success, silent otherwise"""
        return cls((float(p_success), 1.0 - float(p_success)))


class SsLinks(NamedTuple):
    """State probabilities of the three 3-UE links"""
    s: LinkStateProbs
    u: LinkStateProbs
    d: LinkStateProbs


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def mean_snr(distance: float, cfg: RadioConfig, direction: Direction) -> float:
    """Average received SNR per resource block on a link"""
    if direction == "uplink":
        power, density = cfg.ul_power, cfg.ul_noise_density
    else:
        power, density = cfg.dl_power, cfg.dl_noise_density

    noise = db_to_linear(density) * cfg.rb_bandwidth
    gain = db_to_linear(-cfg.pathloss_offset_db) * (distance / cfg.reference_distance) ** (-cfg.pathloss_exponent)
    return gain * (power / cfg.rb_count) / noise


def _thresholds(cfg: RadioConfig, direction: Direction, count: int, strict: bool) -> np.ndarray:
    values = cfg.ul_thresholds if direction == "uplink" else cfg.dl_thresholds
    if len(values) < count:
        raise ValueError(f"{direction} needs {count} thresholds, config has {len(values)}")
    used = np.asarray(values[:count], dtype=float)
    steps = np.diff(used)
    if np.any(steps > 0) or (strict and np.any(steps == 0)):
        raise NonDecreasingThresholds(f"{direction} thresholds must strictly decrease, got {list(used)} dB")
    return np.array([db_to_linear(g) for g in used])


def state_probabilities(
    geom: LinkGeometry, cfg: RadioConfig, num_states: int, strict: bool = True
) -> LinkStateProbs:
    """
    SNR-state probabilities of a Rayleigh-faded link

    Args:
        geom: Link distance and direction
        cfg: Radio configuration
        num_states: Number of states M (M-1 thresholds are used)
        strict: Reject equal consecutive thresholds; relaxed only to test degeneracy

    Returns:
        LinkStateProbs with p^n = exp(-g_n/snr) - exp(-g_{n-1}/snr)
    """
    if num_states < 2:
        raise ValueError(f"num_states must be >= 2, got {num_states}")

    gammas = _thresholds(cfg, geom.direction, num_states - 1, strict)
    snr = mean_snr(geom.distance, cfg, geom.direction)

    # survival[n] = P[SNR >= gamma_n], gamma_0 = +inf
    survival = np.concatenate(([0.0], np.exp(-gammas / snr)))
    probs = np.diff(survival)
    last = 1.0 - survival[-1]
    result = tuple(float(x) for x in np.append(np.clip(probs, 0.0, 1.0), last))

    logger.debug(f"{geom.direction} d={geom.distance} snr={snr:.4g} probs={result}")
    return LinkStateProbs(result)


def link_probs(distance: float, cfg: RadioConfig, direction: Direction, num_states: int = 3) -> LinkStateProbs:
    return state_probabilities(LinkGeometry(distance, direction), cfg, num_states)


def ss_link_probs(
    d_s: float, d_u: float, d_d: float, cfg: RadioConfig
) -> SsLinks:
    """Three-state probabilities of UE_s (UL), UE_u (UL) and UE_d (DL)"""
    return SsLinks(
        link_probs(d_s, cfg, "uplink"),
        link_probs(d_u, cfg, "uplink"),
        link_probs(d_d, cfg, "downlink"),
    )


def symmetric_probs(d: float, cfg: RadioConfig) -> Tuple[float, float]:
    """
    Two-rate success probabilities when every UE sits at distance d

    Args:
        d: UE-to-BS distance in meters
        cfg: Radio configuration

    Returns:
        (p_s, p_d): probability of rate r1 on the uplink and on the downlink
    """
    p_s = link_probs(d, cfg, "uplink", num_states=2).p(1)
    p_d = link_probs(d, cfg, "downlink", num_states=2).p(1)
    return p_s, p_d


def mu_flow_probs(
    distances: Sequence[Tuple[float, float]], ue2bs: Sequence[float], cfg: RadioConfig
) -> Tuple[list, list, list]:
    """Two-rate success probabilities for explicit multi-user placements"""
    p_s = [link_probs(ds, cfg, "uplink", 2).p(1) for ds, _ in distances]
    p_d = [link_probs(dd, cfg, "downlink", 2).p(1) for _, dd in distances]
    p_u = [link_probs(du, cfg, "uplink", 2).p(1) for du in ue2bs]
    return p_s, p_d, p_u
