"""
Reference schedulers: synchronous FedAvg rounds and unbuffered asynchronous FL.

Both reuse the client state machine and the per-(client, round) random
streams of the asynchronous simulator, so equivalences between schedulers
can be checked bit for bit.
"""

import logging
import time
from typing import List, Optional, Sequence

import numpy as np

from fedbuff_validator.config import HyperParams, SimConfig, SyncRoundConfig
from fedbuff_validator.core import initial_server_state, run_client_round, server_apply_immediately, server_receive
from fedbuff_validator.exceptions import ContractError, SimulationAbort
from fedbuff_validator.objectives import Problem, global_gradient, global_objective, make_gradient_oracle
from fedbuff_validator.result_model import MetricRow, RunRecord, StalenessAudit, StalenessRecord
from fedbuff_validator.simulator import DOWNLOAD, UPLOAD_BUFFERED, UPLOAD_FLUSH, RunSink, run_simulation
from fedbuff_validator.utils.helpers import client_stream, model_checksum, sampling_stream

logger = logging.getLogger(__name__)


def run_pure_async(
    problem: Problem,
    hp: HyperParams,
    sim: SimConfig,
    seed: Optional[int] = None,
    sinks: Sequence[RunSink] = (),
    arrivals: Optional[Sequence[int]] = None,
) -> RunRecord:
    """Asynchronous FL without a buffer: every upload is applied on arrival.

    Event semantics are those of the buffered simulator; only the server
    rule differs (w <- w - beta * delta).
    """
    if seed is not None:
        sim = sim.model_copy(update={"seed": seed})
    return run_simulation(
        problem,
        hp,
        sim,
        sinks=sinks,
        aggregator=server_apply_immediately,
        algorithm="PureAsync",
        arrivals=arrivals,
    )


def sample_round_clients(seed: int, round_index: int, n: int, clients_per_round: int) -> List[int]:
    """Clients of a synchronous round, drawn without replacement and sorted by id."""
    rng = sampling_stream(seed, round_index)
    chosen = rng.choice(n, size=clients_per_round, replace=False)
    return sorted(int(c) for c in chosen)


def run_fedavg_sync(
    problem: Problem,
    hp: HyperParams,
    cfg: SyncRoundConfig,
    seed: int,
    horizon_T: int = 16,
    sinks: Sequence[RunSink] = (),
) -> RunRecord:
    """Synchronous rounds: sampled clients start from the same model, the server applies the weighted sum.

    Each round sums the deltas in client-id order starting from zero and
    applies w <- w - aggregation_weight * sum, so full participation with
    weight 1/n reproduces a buffered run with K = n and beta = 1/n.

    Args:
        problem: Generated problem
        hp: Resolved hyperparameters (eta, Q, batch size)
        cfg: Participation and aggregation weight
        seed: Run seed
        horizon_T: Number of rounds
        sinks: Receivers of metric rows and events

    Returns:
        The RunRecord of the completed run
    """
    if hp.eta is None:
        raise ContractError("Unresolved stepsize", "run_fedavg_sync needs a concrete eta")
    if not 1 <= cfg.clients_per_round <= problem.n:
        raise ContractError(
            "SyncRoundConfig.clients_per_round",
            f"must lie in [1, {problem.n}], got {cfg.clients_per_round}",
        )

    # A round is a buffered flush of exactly the sampled clients.
    round_hp = hp.model_copy(update={"K": cfg.clients_per_round, "beta": cfg.aggregation_weight})
    oracles = [make_gradient_oracle(c, hp.batch_size, hp.full_batch) for c in problem.clients]
    state = initial_server_state(problem.initial_model)
    audit = StalenessAudit()
    rows: List[MetricRow] = []
    events: List[dict] = []
    trajectory = [state.model]
    round_index = [0] * problem.n

    def emit(when: float, kind: str, client_id: int, step: int) -> None:
        event = {"time": when, "seq": len(events), "kind": kind, "client": client_id, "step": step}
        events.append(event)
        for sink in sinks:
            sink.on_event(event)

    logger.info(
        f"Running FedAvgSync with n={problem.n}, {cfg.clients_per_round} clients per round, "
        f"Q={hp.Q}, T={horizon_T}, seed={seed}"
    )
    start = time.time()
    try:
        for r in range(horizon_T):
            gradient = global_gradient(problem.clients, state.model)
            row = MetricRow(
                t=r,
                grad_norm_sq=float(np.dot(gradient, gradient)),
                f_value=global_objective(problem.clients, state.model),
                max_staleness_so_far=0,
                uploads_so_far=len(audit),
                wall_events=len(events),
            )
            rows.append(row)
            for sink in sinks:
                sink.on_row(row)

            chosen = sample_round_clients(seed, r, problem.n, cfg.clients_per_round)
            updates = []
            for client_id in chosen:
                emit(float(r), DOWNLOAD, client_id, r)
                rng = client_stream(seed, client_id, round_index[client_id])
                updates.append(run_client_round(client_id, state.model, r, hp, oracles[client_id], rng))
                round_index[client_id] += 1

            for update in updates:
                audit.add(StalenessRecord(update.client_id, update.download_step, r))
                state, flushed = server_receive(state, update, round_hp)
                emit(float(r), UPLOAD_FLUSH if flushed else UPLOAD_BUFFERED, update.client_id, r)
            trajectory.append(state.model)
    except SimulationAbort as e:
        logger.error(f"FedAvgSync run aborted in round {state.server_step_t}: {e}")
        raise

    elapsed = time.time() - start
    logger.info(f"Finished FedAvgSync in {elapsed:.2f}s: {len(audit)} uploads")
    return RunRecord(
        algorithm="FedAvgSync",
        seed=seed,
        horizon_T=horizon_T,
        rows=rows,
        audit=audit,
        final_checksum=model_checksum(state.model),
        trajectory=np.stack(trajectory),
        events=events,
        metadata={"mode": "Synchronous", "elapsed_seconds": elapsed, "server_steps": state.server_step_t},
    )
