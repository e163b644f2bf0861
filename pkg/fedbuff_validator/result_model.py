"""
Standardized result models for simulation runs and analysis commands.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional

import numpy as np

METRIC_COLUMNS = ("t", "grad_norm_sq", "f_value", "max_staleness_so_far", "uploads_so_far", "wall_events")
EVENT_FIELDS = ("time", "seq", "kind", "client", "step")


@dataclass(frozen=True)
class MetricRow:
    """Observables of the server model w^t, recorded when it becomes current."""
    t: int
    grad_norm_sq: float
    f_value: float
    max_staleness_so_far: int
    uploads_so_far: int
    wall_events: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "grad_norm_sq": self.grad_norm_sq,
            "f_value": self.f_value,
            "max_staleness_so_far": self.max_staleness_so_far,
            "uploads_so_far": self.uploads_so_far,
            "wall_events": self.wall_events,
        }


@dataclass(frozen=True)
class StalenessRecord:
    """One applied upload: which snapshot it was computed from and when it landed."""
    client_id: int
    download_step: int
    apply_step: int

    @property
    def staleness(self) -> int:
        return self.apply_step - self.download_step


@dataclass
class StalenessAudit:
    """Every upload's staleness plus the running maximum."""
    records: List[StalenessRecord] = field(default_factory=list)
    max_staleness: int = 0

    def add(self, record: StalenessRecord) -> None:
        """Append a record and update the running maximum.

        Args:
            record: The staleness record to add
        """
        self.records.append(record)
        self.max_staleness = max(self.max_staleness, record.staleness)

    def __len__(self) -> int:
        return len(self.records)

    def to_dict(self) -> Dict[str, Any]:
        """Summary form; individual records live in the event log."""
        histogram: Dict[str, int] = {}
        for record in self.records:
            key = str(record.staleness)
            histogram[key] = histogram.get(key, 0) + 1
        return {
            "uploads": len(self.records),
            "max_staleness": self.max_staleness,
            "histogram": histogram,
        }


@dataclass
class RunRecord:
    """Everything observable about one simulated run."""
    algorithm: str
    seed: int
    horizon_T: int
    fingerprint: str = ""
    status: Literal["ok", "aborted"] = "ok"
    rows: List[MetricRow] = field(default_factory=list)
    audit: StalenessAudit = field(default_factory=StalenessAudit)
    final_checksum: str = ""
    trajectory: Optional[np.ndarray] = None
    events: List[Dict[str, Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    error: Optional[Dict[str, Any]] = None

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([row.grad_norm_sq for row in self.rows], dtype=np.float64)

    @property
    def uploads(self) -> int:
        return len(self.audit)

    def mark_aborted(self, error: Dict[str, Any]) -> None:
        self.status = "aborted"
        self.error = error

    def to_dict(self) -> Dict[str, Any]:
        """Convert the record to its manifest entry (without the trajectory and events).

        Timings stay out so that reruns give identical entries; the final
        checksum is only reported for completed runs.

        Returns:
            Dictionary representation of the record
        """
        completed = self.status == "ok"
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "horizon_T": self.horizon_T,
            "fingerprint": self.fingerprint,
            "status": self.status,
            "rows": len(self.rows),
            "uploads": self.uploads,
            "max_staleness": self.audit.max_staleness,
            "staleness": self.audit.to_dict(),
            "final_checksum": self.final_checksum if completed else None,
            "final_grad_norm_sq": self.rows[-1].grad_norm_sq if self.rows else None,
            "metadata": {k: v for k, v in self.metadata.items() if k != "elapsed_seconds"},
            "error": self.error,
        }


@dataclass(frozen=True)
class TraceDiffResult:
    """Outcome of comparing two event logs line by line."""
    equal: bool
    lines_compared: int
    first_divergence: Optional[int] = None
    line_a: Optional[str] = None
    line_b: Optional[str] = None
