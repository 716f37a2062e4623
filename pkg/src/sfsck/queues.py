"""Work items and the per-pass work queues.

Queues are multi-producer multi-consumer FIFOs.  A queue is *closed* when no
producer will add more items and *drained* once it is closed and every
dequeued item has been marked done, so "drained" implies no item is still in
flight.  Dequeue accounting guarantees items are handed out exactly once.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass

TIMEOUT = object()
CLOSED = object()


@dataclass(frozen=True)
class InodeRange:
    first: int
    count: int

    @property
    def elements(self) -> int:
        return self.count


@dataclass(frozen=True)
class DirBlock:
    dir_ino: int
    block: int

    @property
    def elements(self) -> int:
        return 1


@dataclass(frozen=True)
class DeferredCheck:
    kind: str  # "certify" | "dotdot"
    subject: object

    @property
    def elements(self) -> int:
        return 1


def partition_inodes(total_inodes: int, granularity: int) -> list[InodeRange]:
    """Disjoint ascending ranges covering [2, total_inodes)."""
    if total_inodes < 3:
        raise ValueError("total_inodes must be >= 3")
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    out = []
    first = 2
    while first < total_inodes:
        count = min(granularity, total_inodes - first)
        out.append(InodeRange(first, count))
        first += count
    return out


class WorkQueue:
    """FIFO of work items with element accounting and a drained event."""

    def __init__(self, name: str, events=None):
        self.name = name
        self.events = events
        self._items: deque = deque()
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._closed = False
        self.enqueued = 0
        self.dequeued = 0
        self.done = 0
        self.element_count = 0  # elements currently queued (not in flight)
        self.drained = threading.Event()

    def put(self, item) -> None:
        self.put_many([item])

    def put_many(self, items: list) -> None:
        if not items:
            return
        with self._cond:
            if self._closed:
                raise RuntimeError(f"queue {self.name} is closed")
            self._items.extend(items)
            self.enqueued += len(items)
            self.element_count += sum(i.elements for i in items)
            self._cond.notify(len(items))
        if self.events is not None:
            self.events.emit_item("enqueue", queue=self.name, n=len(items))

    def get(self, timeout: float | None = 0.02):
        """One item, or CLOSED when closed and empty, or TIMEOUT."""
        with self._cond:
            if not self._items:
                if self._closed:
                    return CLOSED
                self._cond.wait(timeout)
            if self._items:
                item = self._items.popleft()
                self.dequeued += 1
                self.element_count -= item.elements
                if self.events is not None and self.events.item_level:
                    self.events.emit("dequeue", queue=self.name, n=1)
                return item
            return CLOSED if self._closed else TIMEOUT

    def get_many(self, limit: int, timeout: float | None = 0.02):
        """Up to ``limit`` items as a list, or CLOSED, or TIMEOUT."""
        with self._cond:
            if not self._items:
                if self._closed:
                    return CLOSED
                self._cond.wait(timeout)
            if self._items:
                out = []
                while self._items and len(out) < limit:
                    item = self._items.popleft()
                    self.element_count -= item.elements
                    out.append(item)
                self.dequeued += len(out)
                if self.events is not None and self.events.item_level:
                    self.events.emit("dequeue", queue=self.name, n=len(out))
                return out
            return CLOSED if self._closed else TIMEOUT

    def task_done(self, n: int = 1) -> None:
        with self._cond:
            self.done += n
            if self._closed and self.done == self.enqueued:
                self.drained.set()
                if self.events is not None:
                    self.events.emit("drained", queue=self.name)

    def close(self) -> None:
        with self._cond:
            if self._closed:
                return
            self._closed = True
            self._cond.notify_all()
            already_drained = self.done == self.enqueued
        if self.events is not None:
            self.events.emit("close", queue=self.name)
        if already_drained:
            self.drained.set()
            if self.events is not None:
                self.events.emit("drained", queue=self.name)

    @property
    def closed(self) -> bool:
        return self._closed

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def elements(self) -> int:
        with self._lock:
            return self.element_count
