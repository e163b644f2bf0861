"""
Experiment orchestration and persistence.

An experiment expands into one cell per (seed, horizon). Each cell carries
its fully resolved config, including stepsizes of an auto schedule, and is
identified by the fingerprint of that config. Cells run in worker processes
and write only their own files; the orchestrator writes the summary and the
manifest once every cell has finished.
"""

import asyncio
import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Any, Dict, List, Optional, Tuple

import yaml

from fedbuff_validator.analysis import (
    BoundInputs,
    BoundReport,
    RateFit,
    aggregate_curves,
    check_bound,
    fit_rate,
    horizon_threshold,
    schedule_stepsizes,
)
from fedbuff_validator.baselines import run_fedavg_sync
from fedbuff_validator.config import (
    Algorithm,
    ArrivalMode,
    ExperimentConfig,
    HyperParams,
    ProblemSpec,
    Schedule,
    SimConfig,
    SyncRoundConfig,
    validate_section,
)
from fedbuff_validator.core import server_apply_immediately, server_receive
from fedbuff_validator.exceptions import (
    ContractError,
    PreconditionRefused,
    SimulationAbort,
    TraceParseError,
)
from fedbuff_validator.logger import log_abort_diagnostic
from fedbuff_validator.objectives import Problem, build_problem, certify_constants, generate_probe_points
from fedbuff_validator.result_model import METRIC_COLUMNS, MetricRow, RunRecord, TraceDiffResult
from fedbuff_validator.simulator import AsyncSimulation, CsvMetricsSink, JsonlEventSink, RunSink
from fedbuff_validator.utils.helpers import fingerprint, load_json_file, save_json_file

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_FILE = "resolved_config.yaml"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"
BOUND_REPORT_FILE = "bound_report.json"
RATE_FIT_FILE = "rate_fit.json"
CELLS_DIR = "cells"
LOGS_DIR = "logs"
RATE_SLOPE_THRESHOLD = -0.35


@dataclass(frozen=True)
class Cell:
    """One (seed, horizon) run of an experiment with its resolved config."""
    name: str
    algorithm: Algorithm
    seed: int
    horizon_T: int
    config: Dict[str, Any]
    fingerprint: str


def cell_name(algorithm: Algorithm, horizon_T: int, seed: int) -> str:
    return f"{algorithm.value}_T{horizon_T}_seed{seed}"


def experiment_fingerprint(config: ExperimentConfig) -> str:
    return fingerprint(config.model_dump(mode="json"))


def resolve_hyper(config: ExperimentConfig, problem: Problem, horizon_T: int) -> HyperParams:
    """Concrete stepsizes for one horizon; auto schedules follow eta = 1/(Q sqrt(L T)), beta = 1/K."""
    hp = config.hyper
    if hp.schedule == Schedule.MANUAL:
        return hp
    eta, beta = schedule_stepsizes(problem.constants.L, hp.Q, hp.K, horizon_T, config.sim.tau_max)
    return hp.with_stepsizes(eta, beta)


def resolve_cells(config: ExperimentConfig, problem: Optional[Problem] = None) -> List[Cell]:
    """Expand an experiment into cells, horizons outermost, seeds in config order.

    Args:
        config: Validated experiment config
        problem: The generated problem, built from config.problem when omitted

    Returns:
        List of resolved cells
    """
    if problem is None:
        problem = build_problem(config.problem, config.hyper.batch_size)

    cells = []
    for horizon_T in config.horizon_grid:
        hp = resolve_hyper(config, problem, horizon_T)
        for seed in config.seeds:
            sim = config.sim_for_problem.model_copy(update={"seed": seed, "horizon_T": horizon_T})
            resolved: Dict[str, Any] = {
                "name": config.name,
                "algorithm": config.algorithm.value,
                "problem": config.problem.model_dump(mode="json"),
                "hyper": hp.model_dump(mode="json"),
                "sim": sim.model_dump(mode="json"),
            }
            if config.algorithm == Algorithm.FEDAVG_SYNC:
                resolved["sync"] = config.sync_round.model_dump(mode="json")
            cells.append(
                Cell(
                    name=cell_name(config.algorithm, horizon_T, seed),
                    algorithm=config.algorithm,
                    seed=seed,
                    horizon_T=horizon_T,
                    config=resolved,
                    fingerprint=fingerprint(resolved),
                )
            )
    return cells


def run_cell(cell: Cell, exp_dir: str) -> Dict[str, Any]:
    """Run one cell and write its CSV (and event log); top level so worker processes can pickle it.

    Returns:
        The cell's manifest entry, plus its gradient-norm curve under ``grad_norms``
    """
    spec = validate_section(ProblemSpec, cell.config["problem"])
    hp = validate_section(HyperParams, cell.config["hyper"])
    sim = validate_section(SimConfig, cell.config["sim"])
    problem = build_problem(spec, hp.batch_size)

    files = [os.path.join(CELLS_DIR, f"{cell.name}.csv")]
    sinks: List[RunSink] = [CsvMetricsSink(os.path.join(exp_dir, files[0]))]
    if sim.event_log:
        files.append(os.path.join(CELLS_DIR, f"{cell.name}.jsonl"))
        sinks.append(JsonlEventSink(os.path.join(exp_dir, files[1])))

    simulation: Optional[AsyncSimulation] = None
    record: Optional[RunRecord] = None
    error: Optional[Dict[str, Any]] = None
    try:
        if cell.algorithm == Algorithm.FEDAVG_SYNC:
            sync = validate_section(SyncRoundConfig, cell.config["sync"])
            record = run_fedavg_sync(problem, hp, sync, cell.seed, horizon_T=cell.horizon_T, sinks=sinks)
        else:
            aggregator = server_apply_immediately if cell.algorithm == Algorithm.PURE_ASYNC else server_receive
            simulation = AsyncSimulation(problem, hp, sim, sinks=sinks, aggregator=aggregator,
                                         algorithm=cell.algorithm.value)
            record = simulation.run()
    except SimulationAbort as e:
        error = e.to_dict()
        diagnostic = log_abort_diagnostic(cell.name, error, os.path.join(exp_dir, LOGS_DIR))
        files.append(os.path.relpath(diagnostic, exp_dir))
        if simulation is not None:
            record = simulation.to_record()
    finally:
        for sink in sinks:
            sink.close()

    if record is None:
        # synchronous rounds keep no partial state; the CSV holds what was recorded
        record = RunRecord(
            algorithm=cell.algorithm.value,
            seed=cell.seed,
            horizon_T=cell.horizon_T,
            rows=read_metric_csv(os.path.join(exp_dir, files[0])),
        )
    record.fingerprint = cell.fingerprint
    if error is not None:
        record.mark_aborted(error)

    entry: Dict[str, Any] = {"name": cell.name, "files": files, **record.to_dict()}
    entry["grad_norms"] = record.grad_norms.tolist()
    return entry


async def _run_cells_async(cells: List[Cell], exp_dir: str, jobs: int) -> List[Dict[str, Any]]:
    semaphore = asyncio.Semaphore(jobs)
    loop = asyncio.get_running_loop()

    with ProcessPoolExecutor(max_workers=jobs) as pool:

        async def run_one(cell: Cell) -> Dict[str, Any]:
            async with semaphore:
                logger.debug(f"Starting cell {cell.name}")
                return await loop.run_in_executor(pool, partial(run_cell, cell, exp_dir))

        return await asyncio.gather(*[run_one(cell) for cell in cells])


def run_cells(cells: List[Cell], exp_dir: str, jobs: int = 1) -> List[Dict[str, Any]]:
    """Run cells serially or over a process pool; results keep cell order."""
    if jobs <= 1 or len(cells) <= 1:
        return [run_cell(cell, exp_dir) for cell in cells]
    return asyncio.run(_run_cells_async(cells, exp_dir, jobs))


def bound_inputs_for(config: ExperimentConfig, problem: Problem, horizon_T: int) -> BoundInputs:
    return BoundInputs(
        L=problem.constants.L,
        sigma_hat_sq=problem.constants.sigma_hat_sq,
        gamma_sq=problem.constants.gamma_sq,
        f0_minus_fstar=problem.f0_minus_fstar(),
        n=problem.n,
        Q=config.hyper.Q,
        K=config.hyper.K,
        tau=config.sim.tau_max,
        T=horizon_T,
    )


def bound_refusal(config: ExperimentConfig, L: float, horizon_T: int, seeds: int) -> Optional[str]:
    """Why the bound cannot be evaluated on an experiment, or None when it can."""
    if config.algorithm != Algorithm.FEDBUFF:
        return f"the bound applies to FedBuff runs, got {config.algorithm.value}"
    if config.sim.mode != ArrivalMode.UNIFORM_ARRIVAL:
        return f"the bound assumes uniform arrivals, got mode {config.sim.mode.value}"
    if config.hyper.schedule != Schedule.AUTO:
        return "the bound needs the auto stepsize schedule"
    if seeds < 2:
        return f"need at least 2 completed seeds, got {seeds}"
    threshold = horizon_threshold(L, config.hyper.Q, config.sim.tau_max)
    if horizon_T < threshold:
        return f"horizon T={horizon_T} is below the admissible threshold {threshold}"
    return None


def _summarize(
    config: ExperimentConfig, problem: Problem, entries: List[Dict[str, Any]]
) -> Dict[str, Any]:
    base_inputs = bound_inputs_for(config, problem, max(config.horizon_grid))
    summary: Dict[str, Any] = {
        "experiment": config.name,
        "algorithm": config.algorithm.value,
        "constants": problem.constants.to_dict(),
        "f0_minus_fstar": problem.f0_minus_fstar(),
        "horizons": [],
        "bound_inputs": base_inputs.to_dict(),
        "bound_value": None,
        "empirical_lhs": None,
        "standard_error": None,
        "satisfied": None,
        "rate_fit": None,
    }
    if config.probe_count > 0:
        probes = generate_probe_points(problem.d, config.probe_radius, config.probe_count, config.problem.seed)
        summary["certificate"] = certify_constants(problem, probes)

    curves = []
    for horizon_T in config.horizon_grid:
        ok = {e["seed"]: e["grad_norms"] for e in entries if e["horizon_T"] == horizon_T and e["status"] == "ok"}
        item: Dict[str, Any] = {"T": horizon_T, "completed_seeds": len(ok)}
        if len(ok) >= 2:
            curve = aggregate_curves(ok)
            curves.append(curve)
            item.update(curve.to_dict())
            inputs = base_inputs.with_horizon(horizon_T)
            refusal = bound_refusal(config, inputs.L, horizon_T, len(ok))
            if refusal is None:
                report = check_bound(curve, inputs, config.stderr_multiplier)
                item["bound"] = report.to_dict()
            else:
                item["bound_skipped"] = refusal
        summary["horizons"].append(item)

    evaluated = [h for h in summary["horizons"] if "bound" in h]
    if evaluated:
        last = evaluated[-1]["bound"]
        for key in ("bound_inputs", "bound_value", "empirical_lhs", "standard_error", "satisfied"):
            summary[key] = last[key]
    if len(curves) >= 4:
        summary["rate_fit"] = fit_rate(curves).to_dict()
    return summary


def _artifact(path: str, kind: str, fp: str) -> Dict[str, str]:
    return {"path": path, "kind": kind, "fingerprint": fp}


def run_experiment(config: ExperimentConfig, out_root: str, jobs: int = 1) -> Dict[str, Any]:
    """Run every cell of an experiment and persist its artifacts.

    Args:
        config: Validated experiment config
        out_root: Output root; artifacts go to <out_root>/<config.name>/
        jobs: Number of cells run concurrently

    Returns:
        The manifest written to manifest.json
    """
    exp_dir = os.path.join(out_root, config.name)
    os.makedirs(os.path.join(exp_dir, CELLS_DIR), exist_ok=True)
    exp_fp = experiment_fingerprint(config)

    with open(os.path.join(exp_dir, RESOLVED_CONFIG_FILE), "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=True)

    problem = build_problem(config.problem, config.hyper.batch_size)
    cells = resolve_cells(config, problem)
    logger.info(f"Experiment '{config.name}': {len(cells)} cells, {jobs} job(s), output in {exp_dir}")

    start = time.time()
    entries = run_cells(cells, exp_dir, jobs)
    elapsed = time.time() - start

    summary = _summarize(config, problem, entries)
    summary["elapsed_seconds"] = elapsed
    save_json_file(summary, os.path.join(exp_dir, SUMMARY_FILE))

    files = [_artifact(RESOLVED_CONFIG_FILE, "config", exp_fp), _artifact(SUMMARY_FILE, "summary", exp_fp)]
    cell_entries = []
    for entry in entries:
        entry = {k: v for k, v in entry.items() if k != "grad_norms"}
        cell_entries.append(entry)
        for path in entry["files"]:
            kind = "abort" if path.startswith(LOGS_DIR) else os.path.splitext(path)[1].lstrip(".")
            files.append(_artifact(path, kind, entry["fingerprint"]))
    log_file = os.path.join(LOGS_DIR, "fedbuff_validator.log")
    if os.path.exists(os.path.join(exp_dir, log_file)):
        files.append(_artifact(log_file, "log", exp_fp))

    manifest = {
        "experiment": config.name,
        "experiment_fingerprint": exp_fp,
        "algorithm": config.algorithm.value,
        "cells": cell_entries,
        "files": files,
    }
    save_json_file(manifest, os.path.join(exp_dir, MANIFEST_FILE))
    manifest["elapsed_seconds"] = elapsed
    return manifest


def load_experiment_dir(exp_dir: str) -> Tuple[ExperimentConfig, Dict[str, Any]]:
    """Read back the resolved config and manifest of an experiment directory."""
    config_path = os.path.join(exp_dir, RESOLVED_CONFIG_FILE)
    manifest = load_json_file(os.path.join(exp_dir, MANIFEST_FILE))
    if not os.path.exists(config_path) or manifest is None:
        raise PreconditionRefused(
            "Not an experiment directory",
            f"{exp_dir} needs {RESOLVED_CONFIG_FILE} and {MANIFEST_FILE}; run the experiment first",
        )
    with open(config_path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    return validate_section(ExperimentConfig, raw), manifest


def read_metric_csv(path: str) -> List[MetricRow]:
    """Parse a per-cell metrics CSV."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ContractError("Malformed metrics file", f"{path} has columns {reader.fieldnames}")
        return [
            MetricRow(
                t=int(r["t"]),
                grad_norm_sq=float(r["grad_norm_sq"]),
                f_value=float(r["f_value"]),
                max_staleness_so_far=int(r["max_staleness_so_far"]),
                uploads_so_far=int(r["uploads_so_far"]),
                wall_events=int(r["wall_events"]),
            )
            for r in reader
        ]


def _curves_by_horizon(exp_dir: str, manifest: Dict[str, Any]) -> Dict[int, Dict[int, List[float]]]:
    grouped: Dict[int, Dict[int, List[float]]] = {}
    for cell in manifest["cells"]:
        if cell["status"] != "ok":
            continue
        rows = read_metric_csv(os.path.join(exp_dir, cell["files"][0]))
        grouped.setdefault(cell["horizon_T"], {})[cell["seed"]] = [row.grad_norm_sq for row in rows]
    return grouped


def _register(exp_dir: str, manifest: Dict[str, Any], path: str, kind: str) -> None:
    if not any(item["path"] == path for item in manifest["files"]):
        manifest["files"].append(_artifact(path, kind, manifest["experiment_fingerprint"]))
        save_json_file(manifest, os.path.join(exp_dir, MANIFEST_FILE))


def verify_bound(exp_dir: str, horizon_T: Optional[int] = None, tolerance: float = 1e-12) -> BoundReport:
    """Check the multi-seed average of an experiment against the convergence bound.

    Args:
        exp_dir: Experiment directory written by run_experiment
        horizon_T: Horizon to check; the largest one by default
        tolerance: Absolute slack of the comparison

    Returns:
        The bound report, also written to bound_report.json

    Raises:
        PreconditionRefused: when the experiment does not meet the bound's hypotheses
    """
    config, manifest = load_experiment_dir(exp_dir)
    horizon_T = horizon_T if horizon_T is not None else max(config.horizon_grid)
    if horizon_T not in config.horizon_grid:
        raise PreconditionRefused("Unknown horizon", f"T={horizon_T} is not among {config.horizon_grid}")

    aborted = [c["name"] for c in manifest["cells"] if c["horizon_T"] == horizon_T and c["status"] != "ok"]
    if aborted:
        raise PreconditionRefused("Aborted runs", f"cells {aborted} did not complete")

    summary = load_json_file(os.path.join(exp_dir, SUMMARY_FILE))
    if summary is None or summary.get("bound_inputs") is None:
        raise PreconditionRefused("Missing summary", f"{exp_dir} has no {SUMMARY_FILE} with bound inputs")
    inputs = BoundInputs.from_dict(summary["bound_inputs"]).with_horizon(horizon_T)

    curves = _curves_by_horizon(exp_dir, manifest).get(horizon_T, {})
    refusal = bound_refusal(config, inputs.L, horizon_T, len(curves))
    if refusal is not None:
        raise PreconditionRefused("Bound not applicable", refusal)

    report = check_bound(aggregate_curves(curves), inputs, config.stderr_multiplier, tolerance)
    save_json_file(report.to_dict(), os.path.join(exp_dir, BOUND_REPORT_FILE))
    _register(exp_dir, manifest, BOUND_REPORT_FILE, "bound_report")
    return report


def fit_rate_dir(exp_dir: str) -> RateFit:
    """Aggregate each horizon of an experiment and fit the log-log decay slope."""
    _, manifest = load_experiment_dir(exp_dir)
    grouped = _curves_by_horizon(exp_dir, manifest)
    curves = [aggregate_curves(grouped[T]) for T in sorted(grouped)]
    fit = fit_rate(curves)
    save_json_file(fit.to_dict(), os.path.join(exp_dir, RATE_FIT_FILE))
    _register(exp_dir, manifest, RATE_FIT_FILE, "rate_fit")
    return fit


def _read_event_lines(path: str) -> List[str]:
    lines = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            text = line.rstrip("\n")
            try:
                json.loads(text)
            except json.JSONDecodeError as e:
                raise TraceParseError(path, number, str(e))
            lines.append(text)
    return lines


def trace_diff(path_a: str, path_b: str) -> TraceDiffResult:
    """Compare two JSONL event logs line by line.

    Raises:
        TraceParseError: when a line of either file is not valid JSON
    """
    lines_a = _read_event_lines(path_a)
    lines_b = _read_event_lines(path_b)
    for index, (a, b) in enumerate(zip(lines_a, lines_b), start=1):
        if a != b:
            return TraceDiffResult(False, index, index, a, b)
    common = min(len(lines_a), len(lines_b))
    if len(lines_a) != len(lines_b):
        line = common + 1
        return TraceDiffResult(
            False,
            common,
            line,
            lines_a[common] if len(lines_a) > common else None,
            lines_b[common] if len(lines_b) > common else None,
        )
    return TraceDiffResult(True, common)
