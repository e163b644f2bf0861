"""
Discrete-event simulation of asynchronous clients.
"""

from fedbuff_validator.simulator.delays import sample_round_delays
from fedbuff_validator.simulator.engine import (
    DOWNLOAD,
    UPLOAD_BUFFERED,
    UPLOAD_FLUSH,
    AsyncSimulation,
    run_simulation,
    sample_arrival_uniform,
)
from fedbuff_validator.simulator.events import EventKind, EventQueue, SimEvent, next_event
from fedbuff_validator.simulator.sinks import CsvMetricsSink, JsonlEventSink, MemorySink, RunSink
from fedbuff_validator.simulator.staleness import (
    check_staleness_config,
    derive_staleness_bound,
    enforce_staleness,
)

__all__ = [
    "AsyncSimulation",
    "CsvMetricsSink",
    "DOWNLOAD",
    "EventKind",
    "EventQueue",
    "JsonlEventSink",
    "MemorySink",
    "RunSink",
    "SimEvent",
    "UPLOAD_BUFFERED",
    "UPLOAD_FLUSH",
    "check_staleness_config",
    "derive_staleness_bound",
    "enforce_staleness",
    "next_event",
    "run_simulation",
    "sample_arrival_uniform",
    "sample_round_delays",
]
