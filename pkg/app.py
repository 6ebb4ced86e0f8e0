import argparse
import json
import logging
import time
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from models.errors import ConfigError, Inconclusive, RelayStabilityError
from models.schemas import GeometryConfig, RegionSummary, ScenarioDoc, SimulationConfig, load_scenario
from services import region_mu, region_ss
from services.policy import MuPolicy, SsPolicy, policy_count
from services.polytope import contains_set
from services.region_io import output_path, write_rows_csv, write_summary_json, write_vertices_csv
from services.simulator import SimConfig, SimOutcome, analytic_rates, replicate, stability_check

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

SS_MODES = ("exact", "approx", "coupling_free")
MU_MODES = ("exact", "reduced", "epsilon")
CANONICAL_ABOVE = 8
COMPARE_MAX_FLOWS = 5

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_ERROR = 2


def _with_distance(doc: ScenarioDoc, distance: float) -> ScenarioDoc:
    return doc.model_copy(update={"geometry": GeometryConfig(distance=distance)})


def _write_region(doc: ScenarioDoc, mode: str, region: region_ss.RegionVertexSet, summary: RegionSummary,
                  extra: Optional[Dict] = None) -> List[str]:
    written = []
    out = doc.outputs.directory
    if "csv" in doc.outputs.formats:
        written.append(write_vertices_csv(output_path(out, doc.name, mode, "vertices.csv"), region))
    if "json" in doc.outputs.formats:
        written.append(write_summary_json(output_path(out, doc.name, mode, "summary.json"), summary, extra))
    return written


def cmd_region(doc: ScenarioDoc, mode: str) -> Tuple[RegionSummary, Dict]:
    """
    Compute a stability region and write its vertex file and summary

    Args:
        doc: Validated scenario
        mode: exact | approx | coupling_free (3-UE), exact | reduced | epsilon (multi-user)

    Returns:
        (RegionSummary, extra summary fields)
    """
    start = time.time()
    sweep = doc.sweep
    extra: Dict = {}
    k0 = avg = None

    if doc.scenario.kind == "ss":
        if mode not in SS_MODES:
            raise ConfigError(f"mode '{mode}' is not available for a 3-UE scenario (use one of {SS_MODES})", ["mode"])
        sc = region_ss.SsScenario.from_doc(doc)
        if mode == "exact":
            region = region_ss.exact_region(sc, sweep.grid, policies=sweep.policies, budget=sweep.budget)
        elif mode == "approx":
            region = region_ss.approx_region(sc, sweep.policies)
        else:
            region = region_ss.coupling_free_region(sc, sweep.grid, sweep.policies)
    else:
        if mode not in MU_MODES:
            raise ConfigError(f"mode '{mode}' is not available for a multi-user scenario (use one of {MU_MODES})", ["mode"])
        sc = region_mu.MuScenario.from_doc(doc)
        if mode == "exact":
            region = region_mu.exact_region(sc, sweep.grid, sweep.budget)
        elif mode == "reduced":
            region = region_mu.reduced_region(sc, sweep.budget)
        else:
            if not doc.geometry.symmetric:
                raise ConfigError("mode 'epsilon' needs a symmetric multi-user scenario", ["geometry"])
            if sweep.epsilon is None:
                raise ConfigError("mode 'epsilon' needs sweep.epsilon", ["sweep.epsilon"])
            canonical = sc.n_flows > CANONICAL_ABOVE
            region, k0 = region_mu.epsilon_region(sc, sweep.epsilon, canonical=canonical, budget=sweep.budget)
            extra = {
                "prefix_orders": policy_count(sc.K, sc.U, k0),
                "alpha_factor": 2 ** min(k0, sc.K),
                "nominal_evaluations": policy_count(sc.K, sc.U, k0) * 2 ** min(k0, sc.K),
                "canonical": canonical,
            }
        avg = region_mu.average_service_rate(region)

    summary = RegionSummary(
        name=doc.name,
        mode=mode,
        vertex_count=len(region),
        policies_evaluated=region.policies,
        points_evaluated=region.evaluated,
        points_skipped=region.skipped,
        k0=k0,
        average_service_rate=avg,
        wall_time=time.time() - start,
        unit=doc.rates.unit,
    )
    _write_region(doc, mode, region, summary, extra)
    return summary, extra


def _compare_ss(doc: ScenarioDoc) -> Tuple[Dict, bool]:
    distances = doc.sweep.distances or [None]
    overlay, reports = [], []
    ok = True
    for d in distances:
        current = doc if d is None else _with_distance(doc, d)
        sc = region_ss.SsScenario.from_doc(current)
        exact, approx, report = region_ss.sandwich_regions(sc, doc.sweep.grid, doc.sweep.policies)
        for source, region in (("exact", exact), ("approx", approx)):
            for point, label in zip(region.points, region.labels):
                overlay.append([d if d is not None else "", source, label.policy, float(point[0]), float(point[1])])
        entry = report.model_dump()
        entry.update({
            "distance": d,
            "outer_holds": report.outer_holds,
            "inner_holds": report.inner_holds,
            "bound_holds": report.bound_holds,
        })
        reports.append(entry)
        ok = ok and report.outer_holds and report.inner_holds and report.bound_holds

    out = doc.outputs.directory
    write_rows_csv(output_path(out, doc.name, "compare", "overlay.csv"),
                   ["distance", "source", "policy", "mu_s", "mu_u"], overlay)
    return {"name": doc.name, "kind": "ss", "reports": reports}, ok


def _compare_mu(doc: ScenarioDoc) -> Tuple[Dict, bool]:
    sc = region_mu.MuScenario.from_doc(doc)
    if sc.n_flows > COMPARE_MAX_FLOWS:
        raise ConfigError(f"compare needs K+U <= {COMPARE_MAX_FLOWS}, scenario has {sc.n_flows}", ["scenario"])
    exact = region_mu.reduced_region(sc, doc.sweep.budget)
    result = {"name": doc.name, "kind": "mu", "exact_average_rate": region_mu.average_service_rate(exact)}
    ok = True
    if sc.is_symmetric and doc.sweep.epsilon is not None:
        eps = doc.sweep.epsilon
        approx, k0 = region_mu.epsilon_region(sc, eps, budget=doc.sweep.budget)
        inner = contains_set(approx.coset(), exact.coset())
        outer = contains_set(exact.coset(), approx.coset(), inflation=eps)
        ok = inner <= 1e-9 * exact.coset().scale and outer <= 1e-9 * exact.coset().scale
        result.update({
            "k0": k0,
            "epsilon": eps,
            "approx_average_rate": region_mu.average_service_rate(approx),
            "inner_violation": inner,
            "outer_violation": outer,
        })
    return result, ok


def cmd_compare(doc: ScenarioDoc) -> Tuple[Dict, bool]:
    """
    Exact versus approximate regions with the containment verdicts

    Args:
        doc: Validated scenario

    Returns:
        (report dictionary, True when the containment assertions hold)
    """
    report, ok = _compare_ss(doc) if doc.scenario.kind == "ss" else _compare_mu(doc)
    report["verdict"] = "pass" if ok else "fail"
    path = output_path(doc.outputs.directory, doc.name, "compare", "report.json")
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    logger.info(f"Wrote comparison report to {path}")
    return report, ok


def _sim_base(doc: ScenarioDoc, sim: SimulationConfig, horizon: int) -> SimConfig:
    if doc.scenario.kind == "ss":
        scenario = region_ss.SsScenario.from_doc(doc)
        policy = SsPolicy(sim.policy).id
        alpha = tuple(sim.alpha)
    else:
        scenario = region_mu.MuScenario.from_doc(doc)
        order = tuple(sim.order) if sim.order is not None else tuple(range(scenario.n_flows))
        policy = MuPolicy(order=order, n_flows=scenario.n_flows)
        if len(sim.alpha) != scenario.K:
            raise ConfigError(f"simulation.alpha needs K={scenario.K} components", ["simulation.alpha"])
        alpha = tuple(sim.alpha)
    return SimConfig(
        scenario=scenario,
        policy=policy,
        alpha=alpha,
        horizon=horizon,
        arrival_mode=sim.arrival_mode,
        arrival_rates=tuple(sim.arrival_rates),
        warmup_fraction=sim.warmup_fraction,
        slope_threshold=sim.slope_threshold,
        trace_every=sim.trace_every,
    )


def _outcome_rows(outcomes: Sequence[SimOutcome]) -> Tuple[List[str], List[List]]:
    first = outcomes[0]
    header = ["seed", "coupling"] + first.service_names + [f"pi0_{n}" for n in first.relay_names]
    header += [f"stable_{n}" for n in first.stability_verdicts]
    rows = []
    for o in outcomes:
        rows.append([o.seed, o.coupling, *map(float, o.empirical_mu), *map(float, o.pi0_empirical),
                     *o.stability_verdicts.values()])
    return header, rows


def cmd_simulate(doc: ScenarioDoc, seeds: Optional[Sequence[int]] = None,
                 horizon: Optional[int] = None) -> Tuple[Dict, bool]:
    """
    Run replications, coupling comparisons and stability checks at scaled loads

    Args:
        doc: Validated scenario with a simulation section
        seeds: Override of sweep.seeds
        horizon: Override of sweep.horizon

    Returns:
        (report dictionary, True when every configured expectation holds)
    """
    sim = doc.simulation or SimulationConfig()
    seeds = list(seeds or doc.sweep.seeds)
    horizon = horizon or doc.sweep.horizon
    out = doc.outputs.directory
    base = _sim_base(doc, sim, horizon)
    report: Dict = {"name": doc.name, "runs": {}}
    ok = True

    couplings = ["relayed", "full_buffer"] if sim.coupling == "both" else [sim.coupling]
    for coupling in couplings:
        trace = output_path(out, doc.name, coupling, "trace.csv") if sim.trace else None
        cfg = replace(base, coupling=coupling, trace_path=trace)
        outcomes = replicate(cfg, seeds)
        header, rows = _outcome_rows(outcomes)
        write_rows_csv(output_path(out, doc.name, coupling, "simulation.csv"), header, rows)
        report["runs"][coupling] = [o.summary().model_dump() for o in outcomes]

    if sim.coupling == "both":
        relayed = np.mean([r["empirical_mu"][0] for r in report["runs"]["relayed"]])
        full = np.mean([r["empirical_mu"][0] for r in report["runs"]["full_buffer"]])
        report["coupling_gain"] = float(relayed - full)
        if relayed <= full:
            logger.warning(f"relayed source rate {relayed:.4g} does not exceed full-buffer rate {full:.4g}")
            ok = False

    if sim.load_scales:
        vertex = analytic_rates(base)
        checks = {}
        for scale in sim.load_scales:
            key = f"{scale:g}"
            try:
                verdicts = stability_check(base, [scale * v for v in vertex], horizon)
                overall = "unstable" if "unstable" in verdicts.values() else "stable"
                checks[key] = {"verdicts": verdicts, "overall": overall}
            except Inconclusive as e:
                logger.warning(f"load x{key} inconclusive: {e} (try horizon {e.suggested_horizon})")
                checks[key] = {"overall": "inconclusive", "suggested_horizon": e.suggested_horizon}
            expected = sim.expect.get(key)
            if expected is not None and checks[key]["overall"] != expected:
                logger.warning(f"load x{key}: expected {expected}, got {checks[key]['overall']}")
                ok = False
        report["load_checks"] = {"vertex": [float(v) for v in vertex], "results": checks}

    report["verdict"] = "pass" if ok else "fail"
    path = output_path(out, doc.name, "simulate", "report.json")
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    return report, ok


def cmd_k0(doc: ScenarioDoc) -> List[Dict]:
    """K0 versus distance and precision for a symmetric placement"""
    distances = doc.sweep.distances or [doc.geometry.distance]
    if any(d is None for d in distances):
        raise ConfigError("k0 needs sweep.distances or a symmetric geometry.distance", ["sweep.distances"])
    n_flows = doc.scenario.K + doc.scenario.U
    rows = region_mu.k0_profile(distances, doc.sweep.epsilons, doc.radio, doc.rates.r1, n_flows)
    write_rows_csv(
        output_path(doc.outputs.directory, doc.name, "k0", "profile.csv"),
        ["distance", "epsilon", "p_s", "p_d", "k0"],
        [[r["distance"], r["epsilon"], r["p_s"], r["p_d"], "" if r["k0"] is None else r["k0"]] for r in rows],
    )
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relay-stability",
        description="Stability regions of a TDD cell whose UE2UE traffic is relayed through base-station queues",
    )
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    region = sub.add_parser("region", help="Compute a stability region")
    region.add_argument("config", help="Scenario JSON file")
    region.add_argument("--mode", required=True, choices=sorted(set(SS_MODES + MU_MODES)))
    region.add_argument("--grid", type=int, help="Override sweep.grid")
    region.add_argument("--epsilon", type=float, help="Override sweep.epsilon")
    region.add_argument("--budget", type=float, help="Override sweep.budget")
    region.add_argument("--out", help="Override outputs.directory")

    compare = sub.add_parser("compare", help="Exact vs approximate regions")
    compare.add_argument("config")
    compare.add_argument("--grid", type=int)
    compare.add_argument("--out")

    simulate = sub.add_parser("simulate", help="Slot-level simulation")
    simulate.add_argument("config")
    simulate.add_argument("--seeds", type=int, nargs="+")
    simulate.add_argument("--horizon", type=int)
    simulate.add_argument("--out")

    validate = sub.add_parser("validate-config", help="Validate a scenario file")
    validate.add_argument("config")

    k0 = sub.add_parser("k0", help="Priority depth K0 versus distance and precision")
    k0.add_argument("config")
    k0.add_argument("--out")
    return parser


def _apply_overrides(doc: ScenarioDoc, args: argparse.Namespace) -> ScenarioDoc:
    sweep = {}
    for name in ("grid", "epsilon", "budget"):
        value = getattr(args, name, None)
        if value is not None:
            sweep[name] = value
    if sweep:
        merged = {**doc.sweep.model_dump(), **sweep}
        try:
            doc = doc.model_copy(update={"sweep": type(doc.sweep).model_validate(merged)})
        except ValidationError as e:
            locations = ["sweep." + ".".join(str(p) for p in err["loc"]) for err in e.errors()]
            lines = [f"{loc}: {err['msg']}" for loc, err in zip(locations, e.errors())]
            raise ConfigError("Invalid command-line override:\n" + "\n".join(lines), locations) from e
    if getattr(args, "out", None):
        doc = doc.model_copy(update={"outputs": doc.outputs.model_copy(update={"directory": args.out})})
    return doc


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, dispatch a command and map the outcome to an exit code

    Args:
        argv: Command-line arguments without the program name

    Returns:
        0 on success, 1 when a verdict assertion fails, 2 on errors
    """
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        doc = load_scenario(args.config)
        if args.command == "validate-config":
            print(f"OK {doc.name} ({doc.scenario.kind})")
            return EXIT_OK

        doc = _apply_overrides(doc, args)
        if args.command == "region":
            summary, extra = cmd_region(doc, args.mode)
            print(json.dumps({**summary.model_dump(), **extra}, indent=2))
            return EXIT_OK
        if args.command == "compare":
            report, ok = cmd_compare(doc)
            print(json.dumps(report, indent=2, default=str))
            return EXIT_OK if ok else EXIT_VERDICT
        if args.command == "simulate":
            report, ok = cmd_simulate(doc, args.seeds, args.horizon)
            print(json.dumps({"verdict": report["verdict"], "load_checks": report.get("load_checks")}, indent=2))
            return EXIT_OK if ok else EXIT_VERDICT
        if args.command == "k0":
            for row in cmd_k0(doc):
                print(f"d={row['distance']:>7.1f}  eps={row['epsilon']:<8g} p_s={row['p_s']:.4f}  K0={row['k0']}")
            return EXIT_OK
    except RelayStabilityError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR

    return EXIT_ERROR

