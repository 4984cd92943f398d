"""
Experiment runner and command-line entry point.

    imisac-run <command> --config scenario.yaml [--seed N] [--out DIR]
               [--threads N] [--strict | --no-strict] [--debug]

Commands: simulate, optimize, estimate, waveform, sweep, pareto. Each writes
`<out>/<command>_result.json`, tidy CSV plot data `<out>/<command>_<kind>.csv`
and the timer tree `<out>/timers.json`. The result JSON holds nothing but
values determined by the config hash and seeds, so reruns give identical
bytes. Environment variables IMISAC_SEED, IMISAC_OUT and IMISAC_THREADS stand
in for the flags of the same name; flags win.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from filelock import FileLock

import imisac
from imisac import serialization
from imisac.base_types import ArchitectureSpec, BasebandProcessor, FeedingMatrix, ReconfigState
from imisac.channel import ChannelSet, GeometryContext, farfield_steering
from imisac.estimate import NmsePoint, PilotProtocol, design_configs, estimate_users, nmse_vs_slots
from imisac.exception import (
    HeterogeneousResults,
    ImIsacException,
    ScenarioValidationError,
    UnknownCommand,
)
from imisac.framework import build_effective_matrix, build_feeds, validate_architecture
from imisac.logging_util import DEBUG, get_logger, log_level_from_env, set_log_level
from imisac.metrics import ScenarioResult, beam_pattern_grid, evaluate_scenario
from imisac.optimize import (
    OptimizationTrace,
    ParetoPoint,
    optimizer_for,
    pareto_sweep,
    trace_effective_matrix,
)
from imisac.settings import (
    CHANNEL_STREAM,
    ESTIMATE_STREAM,
    OPTIMIZE_STREAM,
    WAVEFORM_STREAM,
    ScenarioConfig,
    beam_azimuths,
    build_architecture,
    build_channels,
    env_overrides,
    load_scenario,
    optimizer_config,
    required_sweep_values,
    substream_seed,
)
from imisac.timers import (
    get_timer_tree,
    hierarchical_timer,
    merge_thread_timers,
    reset_timers,
    set_gauge,
)
from imisac.waveform import (
    design_split_pattern,
    harmonic_coefficients,
    harmonic_leakage,
    harmonic_matrices,
)

logger = get_logger(__name__)

LOCK_NAME = ".imisac.lock"
ERROR_FILE = "error.json"
TIMERS_FILE = "timers.json"


class Scenario(NamedTuple):
    """
    One seed's realization of a scenario: the architecture, its feeds and the
    drawn channels.
    """

    config: ScenarioConfig
    config_hash: str
    seed: int
    spec: ArchitectureSpec
    feeds: List[FeedingMatrix]
    channels: ChannelSet
    geometry: GeometryContext


def realize(
    config: ScenarioConfig, seed: int, architecture: Optional[Dict[str, Any]] = None
) -> Scenario:
    spec = build_architecture(architecture or config.architecture)
    report = validate_architecture(spec)
    if not report.passed:
        raise ScenarioValidationError(
            [(f"architecture.{v.field}", v.message) for v in report.violations]
        )
    channels = build_channels(config.channel, spec, substream_seed(seed, CHANNEL_STREAM))
    return Scenario(
        config=config,
        config_hash=config.config_hash(),
        seed=seed,
        spec=spec,
        feeds=build_feeds(spec),
        channels=channels,
        geometry=GeometryContext.from_spec(spec),
    )


def fixed_state(scenario: Scenario) -> ReconfigState:
    """
    The configured state: neutral, or uniformly random from the optimize
    substream.
    """
    if scenario.config.architecture["state"] == "random":
        rng = np.random.default_rng(substream_seed(scenario.seed, OPTIMIZE_STREAM, 1))
        return ReconfigState.random(scenario.spec, rng)
    return ReconfigState.neutral(scenario.spec)


def evaluate(
    scenario: Scenario, E: np.ndarray, objective_trace: Sequence[float] = ()
) -> ScenarioResult:
    return evaluate_scenario(
        E,
        scenario.channels.H,
        scenario.channels.noise_power,
        scenario.channels.target_steering,
        scenario.geometry,
        beam_azimuths(scenario.config.channel),
        stream_to_user=scenario.config.optimizer["stream_to_user"],
        objective_trace=objective_trace,
        seed=scenario.seed,
        config_hash=scenario.config_hash,
    )


def optimize_scenario(scenario: Scenario) -> Tuple[OptimizationTrace, ScenarioResult]:
    cfg = optimizer_config(
        scenario.config.optimizer,
        substream_seed(scenario.seed, OPTIMIZE_STREAM),
        scenario.geometry,
    )
    optimize = optimizer_for(
        scenario.spec, scenario.channels, scenario.feeds, fixed_state(scenario)
    )
    trace = optimize(cfg)
    set_gauge("final_objective", trace.final_objective)
    E = trace_effective_matrix(scenario.spec, scenario.feeds, trace)
    return trace, evaluate(scenario, E, trace.objective_trace)


# Plot records. Each plot kind takes exactly one record type.


class SweepRow(NamedTuple):
    num_layers: int
    elements_per_layer: int
    seed: int
    result: ScenarioResult


class ParetoRow(NamedTuple):
    seed: int
    point: ParetoPoint


class BeamPatternSeries(NamedTuple):
    label: str
    samples: Tuple[Tuple[float, float], ...]


class TraceRow(NamedTuple):
    seed: int
    objective_trace: Tuple[float, ...]


class HarmonicReport(NamedTuple):
    seed: int
    coefficients: np.ndarray


class ChannelDump(NamedTuple):
    seed: int
    H: np.ndarray


class NmseRow(NamedTuple):
    seed: int
    point: NmsePoint


def _sweep_rows(row: SweepRow) -> Iterable[Dict[str, Any]]:
    yield {
        "elements_per_layer": row.elements_per_layer,
        "num_layers": row.num_layers,
        "total_elements": row.elements_per_layer * row.num_layers,
        "seed": row.seed,
        "sum_rate": row.result.sum_rate,
        "worst_target_power": row.result.worst_target_power,
        "label": f"L={row.num_layers}",
    }


def _pareto_rows(row: ParetoRow) -> Iterable[Dict[str, Any]]:
    yield {
        "weight": row.point.weight,
        "rate": row.point.rate,
        "worst_target_power": row.point.worst_target_power,
        "objective": row.point.objective,
        "seed": row.seed,
        "label": f"seed={row.seed}",
    }


def _beampattern_rows(series: BeamPatternSeries) -> Iterable[Dict[str, Any]]:
    for angle, power in series.samples:
        yield {"angle_deg": angle, "power": power, "label": series.label}


def _nmse_rows(row: NmseRow) -> Iterable[Dict[str, Any]]:
    yield {
        "num_slots": row.point.num_slots,
        "nmse": row.point.mean_nmse,
        "condition_number": row.point.mean_condition_number,
        "seed": row.seed,
        "label": f"seed={row.seed}",
    }


def _trace_rows(row: TraceRow) -> Iterable[Dict[str, Any]]:
    for i, objective in enumerate(row.objective_trace):
        yield {"iter": i, "objective": objective, "seed": row.seed, "label": f"seed={row.seed}"}


def _harmonic_rows(report: HarmonicReport) -> Iterable[Dict[str, Any]]:
    N, P = report.coefficients.shape
    for n in range(N):
        for k in range(P):
            c = report.coefficients[n, k]
            yield {"element": n, "k": k, "re": float(c.real), "im": float(c.imag), "seed": report.seed}


def _channel_columns(dumps: Sequence[ChannelDump]) -> Tuple[str, ...]:
    n = max(d.H.shape[1] for d in dumps)
    return ("seed", "user") + tuple(f"{part}_{i}" for i in range(n) for part in ("re", "im"))


def _channel_rows(dump: ChannelDump) -> Iterable[Dict[str, Any]]:
    for user, h in enumerate(dump.H):
        row: Dict[str, Any] = {"seed": dump.seed, "user": user}
        for i, value in enumerate(h):
            row[f"re_{i}"] = float(value.real)
            row[f"im_{i}"] = float(value.imag)
        yield row


# Columns are fixed per kind, except channel dumps whose width follows the
# number of radiating elements.
Columns = Union[Tuple[str, ...], Callable[[Sequence[Any]], Tuple[str, ...]]]

PLOT_KINDS: Dict[str, Tuple[type, Columns, Callable[[Any], Iterable[Dict[str, Any]]]]] = {
    "se_vs_elements": (
        SweepRow,
        (
            "elements_per_layer",
            "num_layers",
            "total_elements",
            "seed",
            "sum_rate",
            "worst_target_power",
            "label",
        ),
        _sweep_rows,
    ),
    "pareto": (
        ParetoRow,
        ("weight", "rate", "worst_target_power", "objective", "seed", "label"),
        _pareto_rows,
    ),
    "beampattern": (BeamPatternSeries, ("angle_deg", "power", "label"), _beampattern_rows),
    "nmse_vs_T": (
        NmseRow,
        ("num_slots", "nmse", "condition_number", "seed", "label"),
        _nmse_rows,
    ),
    "trace": (TraceRow, ("iter", "objective", "seed", "label"), _trace_rows),
    "harmonics": (HarmonicReport, ("element", "k", "re", "im", "seed"), _harmonic_rows),
    "channels": (ChannelDump, _channel_columns, _channel_rows),
}


def emit_plotdata(results: Sequence[Any], kind: str, path: str) -> int:
    """
    Write plot records of one kind as a tidy CSV file (one observation per
    row). Returns the number of data rows.
    """
    if kind not in PLOT_KINDS:
        raise HeterogeneousResults(
            f"Unknown plot kind {kind!r}; expected one of {', '.join(PLOT_KINDS)}."
        )
    record_type, columns, to_rows = PLOT_KINDS[kind]
    if not results:
        raise HeterogeneousResults(f"No results to write as {kind} plot data.")
    mismatched = sorted({type(r).__name__ for r in results if not isinstance(r, record_type)})
    if mismatched:
        raise HeterogeneousResults(
            f"{kind} plot data takes {record_type.__name__} records, got {', '.join(mismatched)}."
        )
    if callable(columns):
        columns = columns(results)
    return serialization.write_csv(path, columns, (row for r in results for row in to_rows(r)))


class RunOutput(NamedTuple):
    """
    What one task contributes: its entry in the result JSON and its plot
    records by kind.
    """

    payload: Dict[str, Any]
    plots: Dict[str, List[Any]]


def _seed_tasks(config: ScenarioConfig) -> List[Any]:
    return list(config.seeds)


def _channel_plots(scenario: Scenario) -> Dict[str, List[Any]]:
    if not scenario.config.channel["export_channels"]:
        return {}
    return {"channels": [ChannelDump(scenario.seed, scenario.channels.H)]}


def _simulate(config: ScenarioConfig, seed: int) -> RunOutput:
    scenario = realize(config, seed)
    V = BasebandProcessor.for_architecture(scenario.spec)
    E = build_effective_matrix(scenario.spec, V, scenario.feeds, fixed_state(scenario)).matrix
    result = evaluate(scenario, E)
    return RunOutput(
        {"seed": seed, "result": serialization.scenario_result_to_dict(result)},
        {
            "beampattern": [BeamPatternSeries(f"seed={seed}", result.beampattern)],
            **_channel_plots(scenario),
        },
    )


def _optimize(config: ScenarioConfig, seed: int) -> RunOutput:
    scenario = realize(config, seed)
    trace, result = optimize_scenario(scenario)
    logger.info(
        f"Seed {seed}: objective {trace.final_objective:.6g} after {trace.iterations} "
        f"iterations ({trace.termination.value})."
    )
    return RunOutput(
        {
            "seed": seed,
            "result": serialization.scenario_result_to_dict(result),
            "trace": serialization.trace_to_dict(trace),
        },
        {
            "beampattern": [BeamPatternSeries(f"seed={seed}", result.beampattern)],
            "trace": [TraceRow(seed, trace.objective_trace)],
            **_channel_plots(scenario),
        },
    )


def _estimate(config: ScenarioConfig, seed: int) -> RunOutput:
    scenario = realize(config, seed)
    est = config.estimation
    spec, feeds, H = scenario.spec, scenario.feeds, scenario.channels.H
    protocol = PilotProtocol(
        tuple(design_configs(spec, est["slots"], substream_seed(seed, ESTIMATE_STREAM))),
        noise_power=est["noise_power"],
        seed=substream_seed(seed, ESTIMATE_STREAM, 1),
    )
    reports = estimate_users(protocol, spec, feeds, H, est["ridge"])
    points: List[NmsePoint] = []
    if est["slot_counts"]:
        points = nmse_vs_slots(
            spec,
            feeds,
            H[0],
            est["slot_counts"],
            est["noise_power"],
            seeds=(substream_seed(seed, ESTIMATE_STREAM, 2),),
            ridge=est["ridge"],
        )
    V = BasebandProcessor.for_architecture(spec)
    result = evaluate(
        scenario, build_effective_matrix(spec, V, feeds, fixed_state(scenario)).matrix
    )
    return RunOutput(
        {
            "seed": seed,
            "result": serialization.scenario_result_to_dict(result),
            "users": [serialization.estimation_report_to_dict(r) for r in reports],
            "nmse_vs_slots": [serialization.nmse_point_to_dict(p) for p in points],
        },
        {"nmse_vs_T": [NmseRow(seed, p) for p in points], **_channel_plots(scenario)},
    )


def _waveform(config: ScenarioConfig, seed: int) -> RunOutput:
    scenario = realize(config, seed)
    w = config.waveform
    spec, feeds, H = scenario.spec, scenario.feeds, scenario.channels.H
    phases = w["comm_phases"]
    if phases is None:
        phases = -np.angle(H[0])
    direction = tuple(np.radians(w["sense_direction"]))
    design = design_split_pattern(
        spec,
        np.asarray(phases, dtype=float),
        direction,
        w["num_slots"],
        substream_seed(seed, WAVEFORM_STREAM),
        feeds=feeds,
        comm_weight=w["comm_weight"],
        sense_weight=w["sense_weight"],
        comm_magnitude=w["comm_magnitude"],
        period=w["period"],
    )
    V = BasebandProcessor.for_architecture(spec)
    decomp = harmonic_coefficients(design.pattern)
    matrices = harmonic_matrices(decomp, feeds, V, spec)
    sense_steering = farfield_steering(
        scenario.geometry.positions, direction, scenario.geometry.wavelength
    )
    leakage = harmonic_leakage(decomp, feeds, V, spec, np.conj(H[0]), sense_steering)
    result = evaluate(scenario, matrices[0])
    azimuths = beam_azimuths(config.channel)
    powers = beam_pattern_grid(matrices[1 % decomp.num_orders], scenario.geometry, azimuths)
    fundamental = tuple((float(np.degrees(a)), float(p)) for a, p in zip(azimuths, powers))
    return RunOutput(
        {
            "seed": seed,
            "result": serialization.scenario_result_to_dict(result),
            "design": serialization.split_design_to_dict(design),
            "leakage": serialization.leakage_to_dict(leakage),
        },
        {
            "beampattern": [
                BeamPatternSeries(f"k=0,seed={seed}", result.beampattern),
                BeamPatternSeries(f"k=1,seed={seed}", fundamental),
            ],
            "harmonics": [HarmonicReport(seed, decomp.coefficients)],
            **_channel_plots(scenario),
        },
    )


def _sweep_architecture(config: ScenarioConfig, value: int) -> Dict[str, Any]:
    architecture = dict(config.architecture)
    counts = architecture["elements_per_layer"]
    total = config.sweep["total_elements"]
    if config.sweep["parameter"] == "elements_per_layer":
        architecture["elements_per_layer"] = value
    else:
        architecture["num_layers"] = value
        if total is not None:
            architecture["elements_per_layer"] = total // value
        elif isinstance(counts, list):
            architecture["elements_per_layer"] = counts[0]
    return architecture


def _sweep_tasks(config: ScenarioConfig) -> List[Any]:
    return [(seed, value) for seed in config.seeds for value in config.sweep["values"]]


def _sweep_point(config: ScenarioConfig, task: Tuple[int, int]) -> RunOutput:
    seed, value = task
    scenario = realize(config, seed, _sweep_architecture(config, value))
    trace, result = optimize_scenario(scenario)
    num_layers = scenario.spec.num_layers
    per_layer = scenario.spec.layers[0].num_elements
    logger.info(
        f"Sweep {config.sweep['parameter']}={value} (seed {seed}): "
        f"sum rate {result.sum_rate:.4f} bits/s/Hz."
    )
    return RunOutput(
        {
            "seed": seed,
            "parameter": config.sweep["parameter"],
            "value": value,
            "num_layers": num_layers,
            "elements_per_layer": per_layer,
            "result": serialization.scenario_result_to_dict(result),
            "termination": trace.termination.value,
        },
        {"se_vs_elements": [SweepRow(num_layers, per_layer, seed, result)]},
    )


def _pareto(config: ScenarioConfig, seed: int) -> RunOutput:
    scenario = realize(config, seed)
    cfg = optimizer_config(
        config.optimizer, substream_seed(seed, OPTIMIZE_STREAM), scenario.geometry
    )
    points = pareto_sweep(
        scenario.spec,
        scenario.channels,
        config.sweep["weights"],
        cfg,
        scenario.feeds,
        fixed_state(scenario),
    )
    return RunOutput(
        {
            "seed": seed,
            "config_hash": scenario.config_hash,
            "points": [serialization.pareto_point_to_dict(p) for p in points],
        },
        {"pareto": [ParetoRow(seed, p) for p in points]},
    )


COMMANDS: Dict[str, Tuple[Callable[[ScenarioConfig], List[Any]], Callable[[ScenarioConfig, Any], RunOutput]]] = {
    "simulate": (_seed_tasks, _simulate),
    "optimize": (_seed_tasks, _optimize),
    "estimate": (_seed_tasks, _estimate),
    "waveform": (_seed_tasks, _waveform),
    "sweep": (_sweep_tasks, _sweep_point),
    "pareto": (_seed_tasks, _pareto),
}


def _collect(command: str, config: ScenarioConfig, outputs: Sequence[RunOutput]) -> Dict[str, str]:
    """
    Write every artifact of a run. Only this collector touches the output
    directory, under a file lock shared with concurrent invocations.
    """
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    artifacts: Dict[str, str] = {}
    with FileLock(os.path.join(out, LOCK_NAME)):
        doc = {
            "command": command,
            "version": imisac.__version__,
            "config_hash": config.config_hash(),
            "runs": [o.payload for o in outputs],
        }
        path = os.path.join(out, f"{command}_result.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write(serialization.dumps(doc))
        artifacts["result"] = path

        plots: Dict[str, List[Any]] = {}
        for output in outputs:
            for kind, records in output.plots.items():
                plots.setdefault(kind, []).extend(records)
        for kind, records in plots.items():
            if records:
                path = os.path.join(out, f"{command}_{kind}.csv")
                emit_plotdata(records, kind, path)
                artifacts[kind] = path

        path = os.path.join(out, TIMERS_FILE)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(get_timer_tree(), f, indent=2)
        artifacts["timers"] = path
    return artifacts


def run(command: str, config: ScenarioConfig, threads: int = 1) -> Dict[str, str]:
    """
    Execute a command for every seed (and sweep value) of the scenario and
    write its artifacts. Tasks run on up to `threads` worker threads; results
    are collected in task order, so the output does not depend on scheduling.
    Returns the written paths by artifact name.
    """
    if command not in COMMANDS:
        raise UnknownCommand(
            f"Unknown command {command!r}; expected one of {', '.join(COMMANDS)}."
        )
    required_sweep_values(config, command)
    make_tasks, execute = COMMANDS[command]
    tasks = make_tasks(config)
    logger.info(
        f"Running {command} ({len(tasks)} tasks, config {config.config_hash()[:12]})."
    )
    reset_timers()
    with hierarchical_timer(f"run.{command}"):
        if threads > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outputs = list(pool.map(lambda task: execute(config, task), tasks))
            merge_thread_timers()
        else:
            outputs = [execute(config, task) for task in tasks]
    artifacts = _collect(command, config, outputs)
    logger.info(f"Finished {command}; results in {artifacts['result']}.")
    return artifacts


def error_document(error: ImIsacException) -> Dict[str, Any]:
    return {
        "error": {
            "code": error.code,
            "message": str(error),
            "details": _jsonable(error.details()),
        }
    }


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float):
        return serialization.real_to_json(value)
    return value


def _report_error(error: ImIsacException, out: Optional[str]) -> None:
    text = json.dumps(error_document(error), indent=2, sort_keys=True, allow_nan=False)
    print(text, file=sys.stderr)
    if out is None:
        return
    try:
        os.makedirs(out, exist_ok=True)
        with FileLock(os.path.join(out, LOCK_NAME)):
            with open(os.path.join(out, ERROR_FILE), "w", encoding="utf-8") as f:
                f.write(text + "\n")
    except OSError as e:
        logger.warning(f"Could not write {ERROR_FILE} to {out}: {e}")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imisac-run",
        description="Run intelligent-metasurface ISAC experiments from a scenario file.",
    )
    parser.add_argument("command", help=f"one of {', '.join(COMMANDS)}")
    parser.add_argument("--config", required=True, help="scenario file (JSON or YAML)")
    parser.add_argument("--seed", type=int, default=None, help="master seed, replaces the scenario's seeds")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    parser.add_argument(
        "--strict",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="treat unknown scenario fields as errors (default)",
    )
    parser.add_argument("--debug", action="store_true", help="verbose logging")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    set_log_level(DEBUG if args.debug else log_level_from_env())
    out: Optional[str] = args.out
    try:
        env = env_overrides(dict(os.environ))
        out = args.out or env.get("output_dir")
        seed = args.seed if args.seed is not None else env.get("seed")
        threads = args.threads if args.threads is not None else env.get("threads", 1)
        errors = []
        if seed is not None and not 0 <= seed < 2 ** 64:
            errors.append(("seed", "expected an unsigned 64-bit integer"))
        if threads < 1:
            errors.append(("threads", "must be at least 1"))
        if errors:
            raise ScenarioValidationError(errors)
        config = load_scenario(args.config, strict=args.strict)
        config = config.with_overrides(seed=seed, output_dir=out)
        out = config.output_dir
        run(args.command, config, threads)
    except ImIsacException as e:
        logger.error(f"{e.code}: {e}")
        _report_error(e, out)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
