"""Engine event log: queue lifecycle, thread placement, barriers, ticks.

Lifecycle events are always recorded (they are cheap and the ordering
invariants are asserted against them); per-item events are opt-in because a
large run emits one per work item.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field


@dataclass
class Event:
    seq: int
    t: float
    kind: str
    data: dict


@dataclass
class EventLog:
    item_level: bool = False
    events: list[Event] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock)
    _seq: int = 0

    def emit(self, kind: str, **data) -> None:
        with self._lock:
            self.events.append(Event(self._seq, time.monotonic(), kind, data))
            self._seq += 1

    def emit_item(self, kind: str, **data) -> None:
        if self.item_level:
            self.emit(kind, **data)

    def of_kind(self, kind: str) -> list[Event]:
        with self._lock:
            return [e for e in self.events if e.kind == kind]

    def first_of(self, kind: str, **match) -> Event | None:
        with self._lock:
            for e in self.events:
                if e.kind == kind and all(e.data.get(k) == v for k, v in match.items()):
                    return e
        return None

    def dump(self, path: str) -> None:
        with self._lock:
            with open(path, "w") as f:
                for e in self.events:
                    f.write(json.dumps({"seq": e.seq, "t": e.t, "kind": e.kind,
                                        **e.data}) + "\n")
