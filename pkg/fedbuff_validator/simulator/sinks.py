"""
Metric and event sinks for simulation runs.

CSV floats are written with repr so identical runs give byte-identical files.
"""

import csv
import logging
import os
from typing import IO, Any, Dict, List, Optional

from fedbuff_validator.result_model import EVENT_FIELDS, METRIC_COLUMNS, MetricRow
from fedbuff_validator.utils.helpers import canonical_json, format_float

logger = logging.getLogger(__name__)


class RunSink:
    """Receives metric rows and events as a run produces them."""

    def on_row(self, row: MetricRow) -> None:
        pass

    def on_event(self, event: Dict[str, Any]) -> None:
        pass

    def close(self) -> None:
        pass

    def __enter__(self) -> "RunSink":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def _open_for_write(path: str) -> IO[str]:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def format_metric_row(row: MetricRow) -> Dict[str, str]:
    return {
        key: format_float(value) if isinstance(value, float) else str(value)
        for key, value in row.to_dict().items()
    }


class CsvMetricsSink(RunSink):
    """Writes one CSV row per server step, columns in METRIC_COLUMNS order."""

    def __init__(self, path: str):
        self.path = path
        self._file: Optional[IO[str]] = _open_for_write(path)
        self._writer = csv.DictWriter(self._file, fieldnames=list(METRIC_COLUMNS), lineterminator="\n")
        self._writer.writeheader()
        self.rows_written = 0

    def on_row(self, row: MetricRow) -> None:
        self._writer.writerow(format_metric_row(row))
        self.rows_written += 1

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
            logger.debug(f"Wrote {self.rows_written} metric rows to {self.path}")


class JsonlEventSink(RunSink):
    """Writes one canonical JSON object per event."""

    def __init__(self, path: str):
        self.path = path
        self._file: Optional[IO[str]] = _open_for_write(path)

    def on_event(self, event: Dict[str, Any]) -> None:
        assert self._file is not None
        self._file.write(canonical_json({key: event[key] for key in EVENT_FIELDS}) + "\n")

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


class MemorySink(RunSink):
    """Keeps rows and events in memory."""

    def __init__(self) -> None:
        self.rows: List[MetricRow] = []
        self.events: List[Dict[str, Any]] = []

    def on_row(self, row: MetricRow) -> None:
        self.rows.append(row)

    def on_event(self, event: Dict[str, Any]) -> None:
        self.events.append(event)
