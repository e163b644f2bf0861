"""
Tests for the discrete-event simulator: event ordering, delays, staleness and arrival modes.
"""

import json
import os
import tempfile
import unittest

import numpy as np
from scipy import stats

from fedbuff_validator.config import (
    ArrivalMode,
    DelayKind,
    DelayModel,
    HyperParams,
    ProblemSpec,
    SimConfig,
    StalenessPolicy,
)
from fedbuff_validator.exceptions import ContractError, DeadlockError, StalenessViolation
from fedbuff_validator.objectives import build_problem
from fedbuff_validator.result_model import METRIC_COLUMNS, MetricRow, StalenessAudit, StalenessRecord
from fedbuff_validator.simulator import (
    DOWNLOAD,
    UPLOAD_BUFFERED,
    UPLOAD_FLUSH,
    AsyncSimulation,
    CsvMetricsSink,
    EventKind,
    EventQueue,
    JsonlEventSink,
    MemorySink,
    derive_staleness_bound,
    enforce_staleness,
    next_event,
    run_simulation,
    sample_arrival_uniform,
    sample_round_delays,
)


def make_problem(n=2, d=3, seed=1):
    return build_problem(ProblemSpec(n=n, d=d, scale=0.5, seed=seed, initial_model=[2.0] * d))


def make_hp(**overrides):
    values = dict(Q=1, eta=0.1, beta=0.5, K=2, batch_size=1)
    values.update(overrides)
    return HyperParams(**values)


def event_driven(download=(0.0,), upload=(1.0,), **overrides):
    values = dict(
        mode=ArrivalMode.EVENT_DRIVEN,
        tau_max=0,
        horizon_T=8,
        delay_model=DelayModel(download=list(download), upload=list(upload)),
    )
    values.update(overrides)
    return SimConfig(**values)


class TestEventQueue(unittest.TestCase):
    """Test the future event list."""

    def test_orders_by_time_then_sequence(self):
        queue = EventQueue()
        queue.schedule(2.0, EventKind.UPLOAD_COMPLETE, 0)
        queue.schedule(1.0, EventKind.DOWNLOAD_COMPLETE, 1)
        queue.schedule(1.0, EventKind.DOWNLOAD_COMPLETE, 2)
        order = [next_event(queue).client_id for _ in range(3)]
        self.assertEqual(order, [1, 2, 0])

    def test_empty_queue_is_a_deadlock(self):
        with self.assertRaises(DeadlockError) as ctx:
            next_event(EventQueue(), 3, 10)
        self.assertIn("server step 3 of 10", ctx.exception.detail)


class TestDelays(unittest.TestCase):
    """Test per-round delay sampling."""

    def test_deterministic_constants_per_client(self):
        model = DelayModel(download=[0.5], upload=[1.0, 3.0])
        self.assertEqual(sample_round_delays(model, 0, 0, 5), (0.5, 1.0))
        self.assertEqual(sample_round_delays(model, 0, 1, 5), (0.5, 3.0))

    def test_uniform_int_range_and_reproducibility(self):
        model = DelayModel(kind=DelayKind.UNIFORM_INT, lo=1, hi=3)
        draws = [sample_round_delays(model, 9, c, r) for c in range(4) for r in range(25)]
        self.assertTrue(all(1.0 <= leg <= 3.0 for pair in draws for leg in pair))
        self.assertEqual(draws, [sample_round_delays(model, 9, c, r) for c in range(4) for r in range(25)])

    def test_geometric_is_capped(self):
        model = DelayModel(kind=DelayKind.GEOMETRIC, p=0.2, cap=3)
        draws = [leg for r in range(200) for leg in sample_round_delays(model, 1, 0, r)]
        self.assertLessEqual(max(draws), 3.0)
        self.assertEqual(min(draws), 0.0)


class TestStaleness(unittest.TestCase):
    """Test the staleness audit, its enforcement and the derived bound."""

    def test_enforce_aborts_on_violation(self):
        audit = StalenessAudit()
        self.assertTrue(enforce_staleness(audit, StalenessRecord(0, 3, 4), 1))
        with self.assertRaises(StalenessViolation) as ctx:
            enforce_staleness(audit, StalenessRecord(1, 0, 4), 1)
        self.assertEqual(ctx.exception.client_id, 1)
        self.assertEqual(ctx.exception.exit_code, 2)
        self.assertEqual(audit.max_staleness, 4)

    def test_observe_logs_and_continues(self):
        audit = StalenessAudit()
        with self.assertLogs("fedbuff_validator.simulator.staleness", level="WARNING"):
            self.assertFalse(enforce_staleness(audit, StalenessRecord(0, 0, 2), 1, StalenessPolicy.OBSERVE))
        self.assertEqual(audit.to_dict(), {"uploads": 1, "max_staleness": 2, "histogram": {"2": 1}})

    def test_derived_bound(self):
        self.assertEqual(derive_staleness_bound(DelayModel(), 1, 1), 0)
        self.assertIsNone(derive_staleness_bound(DelayModel(), 3, 1))
        model = DelayModel(download=[0.0], upload=[1.0, 2.0])
        self.assertEqual(derive_staleness_bound(model, 2, 1), 3)
        self.assertEqual(derive_staleness_bound(model, 2, 2), 2)


class TestEventDriven(unittest.TestCase):
    """Test the event-driven arrival mode."""

    def test_hand_walked_two_client_trace(self):
        problem = make_problem()
        record = run_simulation(problem, make_hp(K=2), event_driven(horizon_T=4))

        self.assertEqual(len(record.rows), 4)
        self.assertEqual([row.t for row in record.rows], [0, 1, 2, 3])
        self.assertEqual(record.audit.max_staleness, 0)
        first_round = [(e["kind"], e["client"], e["time"], e["step"]) for e in record.events[:6]]
        self.assertEqual(
            first_round,
            [
                (DOWNLOAD, 0, 0.0, 0),
                (DOWNLOAD, 1, 0.0, 0),
                (UPLOAD_BUFFERED, 0, 1.0, 0),
                (UPLOAD_FLUSH, 1, 1.0, 0),
                (DOWNLOAD, 0, 1.0, 1),
                (DOWNLOAD, 1, 1.0, 1),
            ],
        )
        flushes = [e for e in record.events if e["kind"] == UPLOAD_FLUSH]
        self.assertEqual(len(flushes), 4)
        self.assertEqual([e["seq"] for e in record.events], list(range(len(record.events))))

    def test_straggler_aborts_with_zero_tau(self):
        sim = event_driven(upload=(1.0, 2.0), tau_max=0)
        with self.assertRaises(StalenessViolation) as ctx:
            run_simulation(make_problem(), make_hp(K=1), sim)
        self.assertEqual((ctx.exception.client_id, ctx.exception.download_step, ctx.exception.apply_step), (1, 0, 1))

    def test_straggler_within_tau_completes(self):
        sim = event_driven(upload=(1.0, 2.0), tau_max=1, horizon_T=12)
        record = run_simulation(make_problem(), make_hp(K=1), sim)
        self.assertEqual(record.audit.max_staleness, 1)
        self.assertEqual(len(record.rows), 12)
        self.assertTrue(all(r.staleness <= 1 for r in record.audit.records))

    def test_observe_policy_records_violations(self):
        sim = event_driven(upload=(1.0, 2.0), tau_max=0, staleness_policy=StalenessPolicy.OBSERVE)
        with self.assertLogs("fedbuff_validator.simulator.staleness", level="WARNING"):
            record = run_simulation(make_problem(), make_hp(K=1), sim)
        self.assertEqual(record.audit.max_staleness, 1)
        self.assertEqual(record.rows[-1].max_staleness_so_far, 1)

    def test_runs_are_deterministic(self):
        sim = event_driven(
            delay_model=DelayModel(kind=DelayKind.UNIFORM_INT, lo=0, hi=3),
            tau_max=100,
            horizon_T=20,
            seed=17,
        )
        problem = make_problem(n=4)
        a = run_simulation(problem, make_hp(K=3, Q=2), sim)
        b = run_simulation(problem, make_hp(K=3, Q=2), sim)
        self.assertEqual(a.events, b.events)
        self.assertEqual(a.final_checksum, b.final_checksum)
        np.testing.assert_array_equal(a.trajectory, b.trajectory)

    def test_seed_changes_the_run(self):
        problem = make_problem(n=3)
        a = run_simulation(problem, make_hp(K=1), event_driven(tau_max=100, seed=1))
        b = run_simulation(problem, make_hp(K=1), event_driven(tau_max=100, seed=2))
        self.assertNotEqual(a.final_checksum, b.final_checksum)

    def test_client_count_mismatch(self):
        with self.assertRaises(ContractError):
            run_simulation(make_problem(n=2), make_hp(), event_driven(n=3, upload=(1.0,)))


class TestUniformArrival(unittest.TestCase):
    """Test the uniform arrival mode."""

    def test_staleness_bounded_and_clamped(self):
        problem = make_problem(n=5)
        sim = SimConfig(mode=ArrivalMode.UNIFORM_ARRIVAL, tau_max=3, horizon_T=30, seed=4)
        record = run_simulation(problem, make_hp(K=2), sim)
        self.assertLessEqual(record.audit.max_staleness, 3)
        for r in record.audit.records:
            self.assertGreaterEqual(r.download_step, 0)
            self.assertLessEqual(r.staleness, min(3, r.apply_step))
        self.assertEqual(len(record.rows), 30)
        self.assertEqual(len(record.audit), 60)

    def test_event_times_count_uploads(self):
        sim = SimConfig(mode=ArrivalMode.UNIFORM_ARRIVAL, horizon_T=3, seed=0)
        record = run_simulation(make_problem(), make_hp(K=2), sim)
        uploads = [e for e in record.events if e["kind"] != DOWNLOAD]
        self.assertEqual([e["time"] for e in uploads], [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])

    def test_matches_event_driven_with_zero_delays(self):
        n, T = 3, 6
        problem = make_problem(n=n)
        hp = make_hp(K=n, beta=1.0 / n, Q=2)
        uniform = run_simulation(
            problem,
            hp,
            SimConfig(mode=ArrivalMode.UNIFORM_ARRIVAL, tau_max=0, horizon_T=T, seed=8),
            arrivals=list(range(n)) * T,
        )
        driven = run_simulation(problem, hp, event_driven(upload=(0.0,), horizon_T=T, seed=8))
        np.testing.assert_array_equal(uniform.trajectory, driven.trajectory)

    def test_arrivals_exhausted(self):
        sim = SimConfig(mode=ArrivalMode.UNIFORM_ARRIVAL, horizon_T=5)
        with self.assertRaises(ContractError):
            run_simulation(make_problem(), make_hp(K=1), sim, arrivals=[0, 1])

    def test_arrivals_out_of_range(self):
        with self.assertRaises(ContractError):
            run_simulation(make_problem(), make_hp(K=1), SimConfig(), arrivals=[0, 2])

    def test_single_client_always_arrives(self):
        rng = np.random.default_rng(0)
        self.assertEqual({sample_arrival_uniform(rng, 1) for _ in range(20)}, {0})

    def test_arrivals_are_uniform(self):
        rng = np.random.default_rng(2024)
        draws = [sample_arrival_uniform(rng, 10) for _ in range(100_000)]
        counts = np.bincount(draws, minlength=10)
        self.assertEqual(len(counts), 10)
        self.assertGreater(stats.chisquare(counts).pvalue, 0.001)


class TestFlushAccounting(unittest.TestCase):
    """Test that every K uploads produce exactly one flush."""

    def assert_flush_accounting(self, simulation, K):
        record = simulation.run()
        uploads = flushes = 0
        for event in record.events:
            if event["kind"] == DOWNLOAD:
                continue
            self.assertEqual(event["step"], uploads // K)
            uploads += 1
            flushes += event["kind"] == UPLOAD_FLUSH
            self.assertEqual(flushes, uploads // K)
        self.assertEqual(uploads, len(record.audit))
        for row in record.rows:
            self.assertEqual(row.uploads_so_far, row.t * K)

        state = simulation.state
        self.assertLess(state.buffer_fill_k, K)
        self.assertEqual(len(record.audit), state.server_step_t * K + state.buffer_fill_k)
        self.assertEqual(state.server_step_t, record.horizon_T)

    def test_event_driven(self):
        sim = event_driven(
            delay_model=DelayModel(kind=DelayKind.UNIFORM_INT, lo=0, hi=3),
            tau_max=100,
            horizon_T=20,
            seed=17,
        )
        self.assert_flush_accounting(AsyncSimulation(make_problem(n=4), make_hp(K=3, Q=2), sim), 3)

    def test_uniform_arrival(self):
        sim = SimConfig(mode=ArrivalMode.UNIFORM_ARRIVAL, tau_max=3, horizon_T=25, seed=6)
        self.assert_flush_accounting(AsyncSimulation(make_problem(n=5), make_hp(K=4), sim), 4)


class TestSinks(unittest.TestCase):
    """Test the CSV and JSONL writers."""

    def test_csv_and_jsonl_output(self):
        with tempfile.TemporaryDirectory() as tmp:
            csv_path = os.path.join(tmp, "cells", "run.csv")
            jsonl_path = os.path.join(tmp, "cells", "run.jsonl")
            memory = MemorySink()
            with CsvMetricsSink(csv_path) as csv_sink, JsonlEventSink(jsonl_path) as event_sink:
                run_simulation(make_problem(), make_hp(), event_driven(horizon_T=5), sinks=[csv_sink, event_sink, memory])

            with open(csv_path, encoding="utf-8") as f:
                lines = f.read().splitlines()
            self.assertEqual(lines[0], ",".join(METRIC_COLUMNS))
            self.assertEqual(len(lines), 6)
            self.assertEqual(len(memory.rows), 5)

            with open(jsonl_path, encoding="utf-8") as f:
                events = [json.loads(line) for line in f]
            self.assertEqual(events, memory.events)
            self.assertEqual(list(events[0]), ["client", "kind", "seq", "step", "time"])

    def test_csv_floats_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "row.csv")
            with CsvMetricsSink(path) as sink:
                sink.on_row(MetricRow(0, 0.1 + 0.2, 1e-300, 0, 0, 0))
            with open(path, encoding="utf-8") as f:
                row = f.read().splitlines()[1].split(",")
            self.assertEqual(float(row[1]), 0.1 + 0.2)
            self.assertEqual(float(row[2]), 1e-300)


if __name__ == "__main__":
    unittest.main()
