import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from models.errors import Inconclusive
from models.schemas import SimSummary
from services.bd_approx import mu_empty_nonempty
from services.policy import MuPolicy, SsPolicy, ss_winner
from services.region_mu import MuScenario, service_rates
from services.region_ss import SsScenario, exact_service_rates, sweep_workers
from services.rng import SeededRNG

logger = logging.getLogger(__name__)

CHUNK = 65536
TREND_SAMPLES = 4000

# (UE_s state, UE_d state) -> component of the fraction vector
PAIR_INDEX = {(1, 1): 0, (1, 2): 1, (2, 1): 2, (2, 2): 3}


@dataclass(frozen=True)
class SimConfig:
    """One slot-level simulation run.

    Arrival rates are in rate units, one per source queue: (lambda_s, lambda_u)
    for the 3-UE scenario, the K UE2UE sources then the U UE2BS sources for
    the multi-user one.
    """
    scenario: Union[SsScenario, MuScenario]
    policy: Union[int, MuPolicy]
    alpha: Tuple[float, ...]
    horizon: int
    seed: int = 0
    arrival_mode: Literal["saturated", "bernoulli"] = "saturated"
    arrival_rates: Tuple[float, ...] = ()
    coupling: Literal["relayed", "full_buffer"] = "relayed"
    warmup_fraction: float = 0.1
    slope_threshold: float = 1e-3
    trace_path: Optional[str] = None
    trace_every: int = 1000

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if self.coupling not in ("relayed", "full_buffer"):
            raise ValueError(f"unknown coupling {self.coupling}")
        if self.arrival_mode not in ("saturated", "bernoulli"):
            raise ValueError(f"unknown arrival mode {self.arrival_mode}")

        if self.is_mu:
            if not isinstance(self.policy, MuPolicy) or self.policy.n_flows != self.scenario.n_flows:
                raise ValueError("a multi-user run needs a MuPolicy over all K+U flows")
            n_alpha, peak = self.scenario.K, self.scenario.r1
        else:
            SsPolicy(self.policy)
            n_alpha, peak = 4, self.scenario.r1
        if len(self.alpha) != n_alpha:
            raise ValueError(f"alpha needs {n_alpha} components, got {len(self.alpha)}")
        if any(a < 0 or a > 1 for a in self.alpha):
            raise ValueError(f"alpha components must be in [0, 1], got {self.alpha}")

        if self.arrival_mode == "bernoulli":
            if len(self.arrival_rates) != self.n_sources:
                raise ValueError(f"need {self.n_sources} arrival rates, got {len(self.arrival_rates)}")
            for lam in self.arrival_rates:
                if lam < 0 or lam > peak:
                    raise ValueError(f"arrival rate {lam} outside [0, {peak}]")

    @property
    def is_mu(self) -> bool:
        return isinstance(self.scenario, MuScenario)

    @property
    def n_sources(self) -> int:
        return self.scenario.n_flows if self.is_mu else 2


@dataclass
class SimOutcome:
    """Measured rates and queue behaviour of one run"""
    seed: int
    coupling: str
    service_names: List[str]
    empirical_mu: np.ndarray
    relay_names: List[str]
    pi0_empirical: np.ndarray
    slopes: Dict[str, float] = field(default_factory=dict)
    stability_verdicts: Dict[str, bool] = field(default_factory=dict)
    final_backlogs: Dict[str, int] = field(default_factory=dict)
    ul_departures: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    relay_arrivals: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dl_departures: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    measured_slots: int = 0

    def summary(self) -> SimSummary:
        return SimSummary(
            seed=self.seed,
            coupling=self.coupling,
            empirical_mu=[float(v) for v in self.empirical_mu],
            pi0_empirical=[float(v) for v in self.pi0_empirical],
            stability_verdicts=list(self.stability_verdicts.values()),
            final_backlogs=list(self.final_backlogs.values()),
        )


class SlotSimulator:
    """Slot-by-slot simulation of the relayed queue system under a priority policy"""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        root = SeededRNG(cfg.seed)
        n_links = 2 * cfg.scenario.K + cfg.scenario.U if cfg.is_mu else 3
        streams = root.streams(n_links + 1 + cfg.n_sources)
        self._links = streams[:n_links]
        self._coin = streams[n_links]
        self._arrivals = streams[n_links + 1:]

    # -- random inputs -------------------------------------------------

    def _link_probs(self) -> List[Tuple[float, ...]]:
        sc = self.cfg.scenario
        if not self.cfg.is_mu:
            return [sc.links.s.probs, sc.links.u.probs, sc.links.d.probs]
        probs = []
        for i in range(sc.K):
            probs.append((sc.p_s[i], 1 - sc.p_s[i]))
            probs.append((sc.p_d[i], 1 - sc.p_d[i]))
        for j in range(sc.U):
            probs.append((sc.p_u[j], 1 - sc.p_u[j]))
        return probs

    def _arrival_params(self) -> List[Tuple[int, float]]:
        cfg, sc = self.cfg, self.cfg.scenario
        if cfg.arrival_mode == "saturated":
            return []
        if cfg.is_mu:
            return [(1, lam / sc.r1) for lam in cfg.arrival_rates]
        return [(sc.k, lam / (sc.k * sc.r2)) for lam in cfg.arrival_rates]

    def _draw_chunk(self, size: int):
        probs = self._link_probs()
        states = [rng.states(p, size) for rng, p in zip(self._links, probs)]
        coin = self._coin.uniform(size)
        arrivals = [rng.binomial(n, p, size) for rng, (n, p) in zip(self._arrivals, self._arrival_params())]
        return states, coin, arrivals

    # -- main loop -----------------------------------------------------

    def run(self) -> SimOutcome:
        cfg = self.cfg
        start = time.time()
        try:
            outcome = self._run_mu() if cfg.is_mu else self._run_ss()
        except Exception as e:
            logger.error(f"Simulation (seed {cfg.seed}) failed: {e}")
            raise
        logger.info(
            f"Simulated {cfg.horizon} slots (seed {cfg.seed}, {cfg.coupling}, {cfg.arrival_mode}) "
            f"in {time.time() - start:.2f}s"
        )
        return outcome

    def _run_ss(self) -> SimOutcome:
        """3-UE slot loop.

        A downlink grant at r1 moves k units and is wasted when fewer than k
        are buffered, so a relay queue stuck below k drains only at r2. This
        is the self-loop of the exact chain, and it is why the exact region
        can sit far inside the approximate one for k > 1.
        """
        cfg, sc = self.cfg, self.cfg.scenario
        k = sc.k
        policy_id = cfg.policy
        alpha = cfg.alpha
        saturated = cfg.arrival_mode == "saturated"
        full_buffer = cfg.coupling == "full_buffer"
        warmup = int(cfg.warmup_fraction * cfg.horizon)

        q_s = q_u = q_bs = 0
        ul_units = relay_in = dl_units = 0
        meas_ul = meas_u = empty_slots = 0
        recorder = _BacklogRecorder(cfg, ["q_s", "q_bs", "q_u"])

        t = 0
        while t < cfg.horizon:
            size = min(CHUNK, cfg.horizon - t)
            (S, U, D), coin, arrivals = self._draw_chunk(size)
            for n in range(size):
                if not saturated:
                    q_s += int(arrivals[0][n])
                    q_u += int(arrivals[1][n])
                measuring = t >= warmup
                if measuring and not full_buffer and q_bs == 0:
                    empty_slots += 1

                s, d, u = int(S[n]), int(D[n]), int(U[n])
                ul_able = s <= 2 and (saturated or q_s > 0)
                dl_able = d <= 2 and (full_buffer or q_bs > 0)
                ue_able = u <= 2 and (saturated or q_u > 0)

                if ul_able and dl_able:
                    relay_class = min(s, d)
                elif ul_able:
                    relay_class = s
                elif dl_able:
                    relay_class = d
                else:
                    relay_class = None
                winner = ss_winner(policy_id, relay_class, u if ue_able else None)

                if winner == "ue2ue":
                    if ul_able and dl_able:
                        go_ul = coin[n] < alpha[PAIR_INDEX[(s, d)]]
                    else:
                        go_ul = ul_able
                    if go_ul:
                        units = k if s == 1 else 1
                        if not saturated:
                            units = min(units, q_s)
                            q_s -= units
                        ul_units += units
                        relay_in += units
                        if not full_buffer:
                            q_bs += units
                        if measuring:
                            meas_ul += units
                    else:
                        if d == 1:
                            # an r1 grant needs a full k-unit packet
                            units = k if (full_buffer or q_bs >= k) else 0
                        else:
                            units = 1
                        if not full_buffer:
                            q_bs -= units
                        dl_units += units
                elif winner == "ue2bs":
                    units = k if u == 1 else 1
                    if not saturated:
                        units = min(units, q_u)
                        q_u -= units
                    if measuring:
                        meas_u += units

                t += 1
                recorder.observe(t, (q_s, q_bs, q_u))

        recorder.close()
        measured = cfg.horizon - warmup
        finite = [] if full_buffer else ["q_bs"]
        if not saturated:
            finite = ["q_s"] + finite + ["q_u"]
        slopes = recorder.slopes(finite)
        return SimOutcome(
            seed=cfg.seed,
            coupling=cfg.coupling,
            service_names=["mu_s", "mu_u"],
            empirical_mu=np.array([meas_ul, meas_u]) * sc.r2 / max(1, measured),
            relay_names=["q_bs"],
            pi0_empirical=np.array([0.0 if full_buffer else empty_slots / max(1, measured)]),
            slopes=slopes,
            stability_verdicts={name: slope < cfg.slope_threshold for name, slope in slopes.items()},
            final_backlogs={"q_s": q_s, "q_bs": q_bs, "q_u": q_u},
            ul_departures=np.array([ul_units]),
            relay_arrivals=np.array([relay_in]),
            dl_departures=np.array([dl_units]),
            measured_slots=measured,
        )

    def _run_mu(self) -> SimOutcome:
        cfg, sc = self.cfg, self.cfg.scenario
        K, U = sc.K, sc.U
        order = cfg.policy.order
        alpha = cfg.alpha
        saturated = cfg.arrival_mode == "saturated"
        full_buffer = cfg.coupling == "full_buffer"
        warmup = int(cfg.warmup_fraction * cfg.horizon)

        q_s, q_bs, q_u = [0] * K, [0] * K, [0] * U
        ul_units, relay_in, dl_units = [0] * K, [0] * K, [0] * K
        meas = [0] * (K + U)
        empty_slots = [0] * K
        names = [f"q_s_{i}" for i in range(K)] + [f"q_bs_{i}" for i in range(K)] + [f"q_u_{j}" for j in range(U)]
        recorder = _BacklogRecorder(cfg, names)

        t = 0
        while t < cfg.horizon:
            size = min(CHUNK, cfg.horizon - t)
            states, coin, arrivals = self._draw_chunk(size)
            for n in range(size):
                if not saturated:
                    for i in range(K):
                        q_s[i] += int(arrivals[i][n])
                    for j in range(U):
                        q_u[j] += int(arrivals[K + j][n])
                measuring = t >= warmup
                if measuring and not full_buffer:
                    for i in range(K):
                        if q_bs[i] == 0:
                            empty_slots[i] += 1

                for index in order:
                    if index < K:
                        ul = states[2 * index][n] == 1 and (saturated or q_s[index] > 0)
                        dl = states[2 * index + 1][n] == 1 and (full_buffer or q_bs[index] > 0)
                        if not (ul or dl):
                            continue
                        go_ul = coin[n] < alpha[index] if (ul and dl) else ul
                        if go_ul:
                            if not saturated:
                                q_s[index] -= 1
                            if not full_buffer:
                                q_bs[index] += 1
                            ul_units[index] += 1
                            relay_in[index] += 1
                            if measuring:
                                meas[index] += 1
                        else:
                            if not full_buffer:
                                q_bs[index] -= 1
                            dl_units[index] += 1
                        break
                    j = index - K
                    if states[2 * K + j][n] == 1 and (saturated or q_u[j] > 0):
                        if not saturated:
                            q_u[j] -= 1
                        if measuring:
                            meas[index] += 1
                        break

                t += 1
                recorder.observe(t, (*q_s, *q_bs, *q_u))

        recorder.close()
        measured = cfg.horizon - warmup
        finite = [] if full_buffer else [f"q_bs_{i}" for i in range(K)]
        if not saturated:
            finite = [f"q_s_{i}" for i in range(K)] + finite + [f"q_u_{j}" for j in range(U)]
        slopes = recorder.slopes(finite)
        backlogs = dict(zip(names, (*q_s, *q_bs, *q_u)))
        return SimOutcome(
            seed=cfg.seed,
            coupling=cfg.coupling,
            service_names=[f"mu_s_{i}" for i in range(K)] + [f"mu_u_{j}" for j in range(U)],
            empirical_mu=np.array(meas) * sc.r1 / max(1, measured),
            relay_names=[f"q_bs_{i}" for i in range(K)],
            pi0_empirical=np.array([0.0 if full_buffer else e / max(1, measured) for e in empty_slots]),
            slopes=slopes,
            stability_verdicts={name: slope < cfg.slope_threshold for name, slope in slopes.items()},
            final_backlogs=backlogs,
            ul_departures=np.array(ul_units),
            relay_arrivals=np.array(relay_in),
            dl_departures=np.array(dl_units),
            measured_slots=measured,
        )


class _BacklogRecorder:
    """Samples backlogs for the trend test and writes the optional time series"""

    def __init__(self, cfg: SimConfig, names: List[str]):
        self.names = names
        self.every = max(1, cfg.horizon // TREND_SAMPLES)
        self.half = cfg.horizon // 2
        self.times: List[int] = []
        self.values: List[Tuple[int, ...]] = []
        self.trace_every = cfg.trace_every
        self._file = None
        self._writer = None
        if cfg.trace_path:
            self._file = open(cfg.trace_path, "w", newline="")
            self._writer = csv.writer(self._file)
            self._writer.writerow(["slot"] + names)

    def observe(self, t: int, backlog: Tuple[int, ...]):
        if t % self.every == 0 and t >= self.half:
            self.times.append(t)
            self.values.append(backlog)
        if self._writer is not None and t % self.trace_every == 0:
            self._writer.writerow([t, *backlog])

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None

    def slopes(self, names: Sequence[str]) -> Dict[str, float]:
        """Least-squares backlog growth per slot over the second half of the run"""
        result = {}
        if len(self.times) < 2:
            return {name: 0.0 for name in names}
        x = np.array(self.times, dtype=float)
        data = np.array(self.values, dtype=float)
        for name in names:
            y = data[:, self.names.index(name)]
            result[name] = float(np.polyfit(x, y, 1)[0])
        return result


def run(cfg: SimConfig) -> SimOutcome:
    """
    Simulate one configuration

    Args:
        cfg: Simulation configuration

    Returns:
        SimOutcome with rates in the scenario's rate units
    """
    return SlotSimulator(cfg).run()


def classify_slope(slope: float, threshold: float, horizon: int) -> str:
    """Stable below threshold/2, unstable above 2*threshold"""
    if slope < threshold / 2:
        return "stable"
    if slope > 2 * threshold:
        return "unstable"
    raise Inconclusive(
        f"backlog slope {slope:.2e} inside [{threshold / 2:.1e}, {2 * threshold:.1e}], lengthen the horizon",
        slope,
        4 * horizon,
    )


def stability_check(cfg: SimConfig, rates: Sequence[float], horizon: Optional[int] = None) -> Dict[str, str]:
    """
    Do the queues stay bounded under Bernoulli arrivals at the given rates?

    Args:
        cfg: Base configuration (policy, alpha, scenario, seed)
        rates: Mean arrival rate per source queue, in rate units
        horizon: Slots to simulate, cfg.horizon by default

    Returns:
        Verdict "stable" or "unstable" per finite queue
    """
    loaded = replace(
        cfg,
        arrival_mode="bernoulli",
        arrival_rates=tuple(float(r) for r in rates),
        horizon=horizon or cfg.horizon,
    )
    outcome = run(loaded)
    verdicts = {name: classify_slope(slope, cfg.slope_threshold, loaded.horizon) for name, slope in outcome.slopes.items()}
    logger.info(f"Stability check at rates {tuple(rates)}: {verdicts}")
    return verdicts


def replicate(cfg: SimConfig, seeds: Sequence[int]) -> List[SimOutcome]:
    """Independent runs of one configuration, one per seed"""
    configs = [replace(cfg, seed=seed, trace_path=None if i else cfg.trace_path) for i, seed in enumerate(seeds)]
    workers = sweep_workers()
    if workers > 1 and len(configs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, configs))
    return [run(c) for c in configs]


def analytic_rates(cfg: SimConfig) -> np.ndarray:
    """Service rates the analysis predicts for the configuration's policy and alpha"""
    if cfg.is_mu:
        return service_rates(cfg.scenario, cfg.policy, cfg.alpha)
    if cfg.coupling == "full_buffer":
        params = cfg.scenario.params(cfg.policy)
        _, mu_s1, _, mu_u1 = mu_empty_nonempty(params, cfg.scenario.links, cfg.scenario.k, cfg.alpha, cfg.scenario.r2)
        return np.array([mu_s1, mu_u1])
    mu_s, mu_u, _ = exact_service_rates(cfg.scenario, cfg.policy, cfg.alpha)
    return np.array([mu_s, mu_u])
