"""
Deterministic simulation of buffered asynchronous aggregation.

Two arrival modes drive the same client and server state machines:

* EventDriven: download and upload delays are sampled per client round and
  arrivals emerge from a future event list. A client downloads, runs its Q
  local steps at download completion, uploads, and requests its next
  download as soon as the upload lands.
* UniformArrival: every buffer slot draws its client uniformly and computes
  the update from a snapshot whose staleness is drawn from {0, ..., tau_max},
  clamped to the available history.
"""

import logging
import time
from collections import deque
from typing import Any, Deque, Dict, List, Optional, Sequence

import numpy as np

from fedbuff_validator.config import ArrivalMode, HyperParams, SimConfig
from fedbuff_validator.core import (
    ClientUpdate,
    ServerAggregator,
    run_client_round,
    server_receive,
    initial_server_state,
    warn_on_server_scaling,
)
from fedbuff_validator.exceptions import ContractError, SimulationAbort
from fedbuff_validator.objectives import GradientOracle, Problem, global_gradient, global_objective, make_gradient_oracle
from fedbuff_validator.result_model import MetricRow, RunRecord, StalenessAudit, StalenessRecord
from fedbuff_validator.simulator.delays import sample_round_delays
from fedbuff_validator.simulator.events import EventKind, EventQueue, next_event
from fedbuff_validator.simulator.sinks import RunSink
from fedbuff_validator.simulator.staleness import check_staleness_config, enforce_staleness
from fedbuff_validator.utils.helpers import arrival_stream, client_stream, model_checksum

logger = logging.getLogger(__name__)

DOWNLOAD = "download"
UPLOAD_BUFFERED = "upload_buffered"
UPLOAD_FLUSH = "upload_flush"


def sample_arrival_uniform(rng_stream: np.random.Generator, n: int) -> int:
    """Draw the contributing client of a buffer slot uniformly from [n]."""
    return int(rng_stream.integers(0, n))


class AsyncSimulation:
    """One run of the asynchronous scheduler over a generated problem."""

    def __init__(
        self,
        problem: Problem,
        hp: HyperParams,
        sim: SimConfig,
        sinks: Sequence[RunSink] = (),
        aggregator: ServerAggregator = server_receive,
        algorithm: str = "FedBuff",
        arrivals: Optional[Sequence[int]] = None,
    ):
        if not hp.resolved:
            raise ContractError("Unresolved stepsizes", "run_simulation needs concrete eta and beta")
        if sim.n is not None and sim.n != problem.n:
            raise ContractError("SimConfig.n", f"sim.n={sim.n} does not match the problem's {problem.n} clients")
        if arrivals is not None and any(not 0 <= a < problem.n for a in arrivals):
            raise ContractError("Arrival sequence", f"client ids must lie in [0, {problem.n})")

        self.problem = problem
        self.hp = hp
        self.sim = sim
        self.sinks = list(sinks)
        self.aggregator = aggregator
        self.algorithm = algorithm
        self.arrivals = list(arrivals) if arrivals is not None else None

        self.n = problem.n
        self.horizon_T = sim.horizon_T
        self.oracles: List[GradientOracle] = [
            make_gradient_oracle(c, hp.batch_size, hp.full_batch) for c in problem.clients
        ]
        self.state = initial_server_state(problem.initial_model)
        self.audit = StalenessAudit()
        self.rows: List[MetricRow] = []
        self.events: List[Dict[str, Any]] = []
        self.trajectory: List[np.ndarray] = [self.state.model]
        self.round_index = [0] * self.n

    @property
    def done(self) -> bool:
        return self.state.server_step_t >= self.horizon_T

    def _emit(self, when: float, kind: str, client_id: int, step: int) -> None:
        event = {"time": float(when), "seq": len(self.events), "kind": kind, "client": client_id, "step": step}
        self.events.append(event)
        for sink in self.sinks:
            sink.on_event(event)

    def _record_current_model(self) -> None:
        t = self.state.server_step_t
        if t >= self.horizon_T:
            return
        w = self.state.model
        gradient = global_gradient(self.problem.clients, w)
        row = MetricRow(
            t=t,
            grad_norm_sq=float(np.dot(gradient, gradient)),
            f_value=global_objective(self.problem.clients, w),
            max_staleness_so_far=self.audit.max_staleness,
            uploads_so_far=len(self.audit),
            wall_events=len(self.events),
        )
        self.rows.append(row)
        for sink in self.sinks:
            sink.on_row(row)

    def _client_round(self, client_id: int, model: np.ndarray, step: int) -> ClientUpdate:
        rng = client_stream(self.sim.seed, client_id, self.round_index[client_id])
        update = run_client_round(client_id, model, step, self.hp, self.oracles[client_id], rng)
        self.round_index[client_id] += 1
        return update

    def _receive(self, update: ClientUpdate, when: float) -> bool:
        apply_step = self.state.server_step_t
        enforce_staleness(
            self.audit,
            StalenessRecord(update.client_id, update.download_step, apply_step),
            self.sim.tau_max,
            self.sim.staleness_policy,
        )
        self.state, flushed = self.aggregator(self.state, update, self.hp)
        self._emit(when, UPLOAD_FLUSH if flushed else UPLOAD_BUFFERED, update.client_id, apply_step)
        if flushed:
            self.trajectory.append(self.state.model)
            self._record_current_model()
        return flushed

    def _run_event_driven(self) -> None:
        delays = self.sim.delay_model
        check_staleness_config(delays, self.n, self.hp.K, self.sim.tau_max, self.sim.staleness_policy)
        queue = EventQueue()
        pending_upload = [0.0] * self.n

        def request_download(client_id: int, now: float) -> None:
            down, up = sample_round_delays(delays, self.sim.seed, client_id, self.round_index[client_id])
            pending_upload[client_id] = up
            queue.schedule(now + down, EventKind.DOWNLOAD_COMPLETE, client_id)

        for client_id in range(self.n):
            request_download(client_id, 0.0)

        while not self.done:
            event = next_event(queue, self.state.server_step_t, self.horizon_T)
            if event.kind == EventKind.DOWNLOAD_COMPLETE:
                step = self.state.server_step_t
                self._emit(event.fire_time, DOWNLOAD, event.client_id, step)
                update = self._client_round(event.client_id, self.state.model, step)
                queue.schedule(event.fire_time + pending_upload[event.client_id], EventKind.UPLOAD_COMPLETE,
                               event.client_id, update)
            else:
                assert event.update is not None
                self._receive(event.update, event.fire_time)
                if not self.done:
                    request_download(event.client_id, event.fire_time)

    def _run_uniform_arrival(self) -> None:
        rng = arrival_stream(self.sim.seed)
        history: Deque[np.ndarray] = deque([self.state.model], maxlen=self.sim.tau_max + 1)
        slot = 0
        while not self.done:
            if self.arrivals is not None:
                if slot >= len(self.arrivals):
                    raise ContractError(
                        "Arrival sequence exhausted",
                        f"{len(self.arrivals)} arrivals reached server step {self.state.server_step_t} "
                        f"of {self.horizon_T}",
                    )
                client_id = self.arrivals[slot]
            else:
                client_id = sample_arrival_uniform(rng, self.n)
            t = self.state.server_step_t
            staleness = min(int(rng.integers(0, self.sim.tau_max + 1)), t)
            snapshot_step = t - staleness
            self._emit(float(slot), DOWNLOAD, client_id, snapshot_step)
            update = self._client_round(client_id, history[-(staleness + 1)], snapshot_step)
            if self._receive(update, float(slot)):
                history.append(self.state.model)
            slot += 1

    def run(self) -> RunRecord:
        """Run until the server reaches horizon_T.

        Returns:
            The completed RunRecord

        Raises:
            SimulationAbort: on a staleness violation, a non-finite value or a deadlock
        """
        warn_on_server_scaling(self.hp)
        logger.info(
            f"Running {self.algorithm} ({self.sim.mode.value}) with n={self.n}, K={self.hp.K}, "
            f"Q={self.hp.Q}, T={self.horizon_T}, seed={self.sim.seed}"
        )
        start = time.time()
        self._record_current_model()
        try:
            if self.sim.mode == ArrivalMode.EVENT_DRIVEN:
                self._run_event_driven()
            else:
                self._run_uniform_arrival()
        except SimulationAbort as e:
            logger.error(f"{self.algorithm} run aborted at server step {self.state.server_step_t}: {e}")
            raise

        elapsed = time.time() - start
        logger.info(
            f"Finished {self.algorithm} in {elapsed:.2f}s: {len(self.audit)} uploads, "
            f"max staleness {self.audit.max_staleness}"
        )
        return self.to_record(elapsed)

    def to_record(self, elapsed: float = 0.0) -> RunRecord:
        """Snapshot of the run so far; complete once run() has returned."""
        return RunRecord(
            algorithm=self.algorithm,
            seed=self.sim.seed,
            horizon_T=self.horizon_T,
            rows=list(self.rows),
            audit=self.audit,
            final_checksum=model_checksum(self.state.model),
            trajectory=np.stack(self.trajectory),
            events=list(self.events),
            metadata={"mode": self.sim.mode.value, "elapsed_seconds": elapsed, "server_steps": self.state.server_step_t},
        )


def run_simulation(
    problem: Problem,
    hp: HyperParams,
    sim: SimConfig,
    sinks: Sequence[RunSink] = (),
    aggregator: ServerAggregator = server_receive,
    algorithm: str = "FedBuff",
    arrivals: Optional[Sequence[int]] = None,
) -> RunRecord:
    """Simulate buffered asynchronous aggregation up to sim.horizon_T server steps.

    Args:
        problem: Generated problem with clients, constants and initial model
        hp: Resolved hyperparameters
        sim: Simulation settings (mode, delays, staleness bound, seed)
        sinks: Receivers of metric rows and events
        aggregator: Server update rule; buffered by default
        algorithm: Name recorded in the RunRecord
        arrivals: Fixed client order for UniformArrival mode

    Returns:
        The RunRecord of the completed run
    """
    return AsyncSimulation(problem, hp, sim, sinks, aggregator, algorithm, arrivals).run()
