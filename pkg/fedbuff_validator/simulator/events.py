"""
Future event list for the event-driven scheduler.
"""

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

from fedbuff_validator.core import ClientUpdate
from fedbuff_validator.exceptions import DeadlockError


class EventKind(str, Enum):
    DOWNLOAD_COMPLETE = "DownloadComplete"
    UPLOAD_COMPLETE = "UploadComplete"


@dataclass(frozen=True, order=True)
class SimEvent:
    """A scheduled event; (fire_time, sequence_no) is a total order."""
    fire_time: float
    sequence_no: int
    kind: EventKind = field(compare=False)
    client_id: int = field(compare=False)
    update: Optional[ClientUpdate] = field(default=None, compare=False)


class EventQueue:
    """Min-heap of SimEvents with creation-order sequence numbers."""

    def __init__(self) -> None:
        self._heap: List[SimEvent] = []
        self._next_seq = 0

    def schedule(
        self,
        fire_time: float,
        kind: EventKind,
        client_id: int,
        update: Optional[ClientUpdate] = None,
    ) -> SimEvent:
        """Create an event with the next sequence number and push it."""
        event = SimEvent(fire_time, self._next_seq, kind, client_id, update)
        self._next_seq += 1
        heapq.heappush(self._heap, event)
        return event

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)


def next_event(queue: EventQueue, server_step: Optional[int] = None, horizon_T: Optional[int] = None) -> SimEvent:
    """Pop the minimum event under (fire_time, sequence_no).

    Raises:
        DeadlockError: if the queue is empty
    """
    if not queue:
        where = ""
        if server_step is not None and horizon_T is not None:
            where = f" at server step {server_step} of {horizon_T}"
        raise DeadlockError("Event queue drained", f"no pending events{where}")
    return queue.pop()
