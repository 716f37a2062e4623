"""Work-proportional thread assignment and the resource-aware core budget.

Outstanding work per pass is (queued elements) x (normalizing weight); the
thread shares are proportional to it and rounded by largest remainder so
they always sum to the core budget.  The budget itself tracks idle cores,
moving by at most ``step`` per tick to damp oscillation.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction


@dataclass(frozen=True)
class PassLoad:
    queue_len: int
    per_item: int  # elements per queue entry; use 1 and pre-summed queue_len for mixed items
    weight: float
    elements: int | None = None  # exact summed elements when items are mixed-size

    @property
    def work(self) -> Fraction:
        n = self.elements if self.elements is not None else self.queue_len * self.per_item
        return Fraction(n) * Fraction(self.weight).limit_denominator(1_000_000)


@dataclass(frozen=True)
class SchedulerSnapshot:
    loads: tuple[PassLoad, ...]
    core_budget: int

    @property
    def n_passes(self) -> int:
        return len(self.loads)


def outstanding_work(snapshot: SchedulerSnapshot) -> Fraction:
    """Total outstanding work: sum of queued-elements x weight over passes."""
    return sum((ld.work for ld in snapshot.loads), start=Fraction(0))


def assign_threads(snapshot: SchedulerSnapshot) -> list[int]:
    """Integer thread counts per pass, largest-remainder rounded, sum == budget.

    Ties in remainder go to the lower pass index.  Every pass with work gets
    at least one thread when the budget allows; with no work anywhere the
    whole budget goes to the first pass.
    """
    c = snapshot.core_budget
    works = [ld.work for ld in snapshot.loads]
    total = sum(works, start=Fraction(0))
    n = len(works)
    if c < 1 or n == 0:
        return [0] * n
    if total == 0:
        return [c] + [0] * (n - 1)

    shares = [Fraction(c) * w / total for w in works]
    t = [int(s) for s in shares]  # floor
    remainder = c - sum(t)
    order = sorted(range(n), key=lambda i: (-(shares[i] - t[i]), i))
    for i in order[:remainder]:
        t[i] += 1

    active = [i for i in range(n) if works[i] > 0]
    if c >= len(active):
        for i in active:
            if t[i] == 0:
                donors = [j for j in range(n) if t[j] >= 2 or (t[j] >= 1 and works[j] == 0)]
                donor = max(donors, key=lambda j: (t[j], -j))
                t[donor] -= 1
                t[i] = 1
    return t


@dataclass(frozen=True)
class UtilizationSample:
    total_cores: int
    busy_cores: int  # cores consumed by processes other than the checker
    checker_threads_running: int
    timestamp: float = 0.0

    def __post_init__(self):
        if not 0 <= self.busy_cores <= self.total_cores:
            raise ValueError("busy_cores outside [0, total_cores]")


def core_budget(sample: UtilizationSample, current: int, step: int = 2) -> int:
    """Next core budget: grow toward idle cores, shrink to avoid multiplexing."""
    idle = sample.total_cores - sample.busy_cores
    running = sample.checker_threads_running
    if idle > running:
        new = current + min(idle - running, step)
    elif running > idle:
        new = max(current - step, max(idle, 1))
    else:
        new = current
    return max(1, min(new, sample.total_cores))


class FakeUtilization:
    """Replays a scripted list of (total, busy) pairs; repeats the last one."""

    def __init__(self, script: list[tuple[int, int]]):
        if not script:
            raise ValueError("script must not be empty")
        self.script = list(script)
        self.pos = 0

    def sample(self, checker_threads_running: int) -> UtilizationSample:
        total, busy = self.script[min(self.pos, len(self.script) - 1)]
        self.pos += 1
        return UtilizationSample(total, busy, checker_threads_running,
                                 timestamp=time.monotonic())


class SystemUtilization:
    """Busy-core estimate from OS counters, excluding the checker's own use."""

    def __init__(self):
        import psutil
        self._psutil = psutil
        self._proc = psutil.Process()
        psutil.cpu_percent(interval=None)
        self._proc.cpu_percent(interval=None)

    def sample(self, checker_threads_running: int) -> UtilizationSample:
        total = self._psutil.cpu_count() or 1
        system = self._psutil.cpu_percent(interval=None) * total / 100.0
        own = self._proc.cpu_percent(interval=None) / 100.0
        busy = max(0, min(total, round(system - own)))
        return UtilizationSample(total, busy, checker_threads_running,
                                 timestamp=time.monotonic())


@dataclass
class SchedConfig:
    weight_inodes: float = 1.0
    weight_dir_blocks: float = 4.0
    tick_s: float = 0.010
    budget_step: int = 2


class SchedulerThread:
    """Periodic loop: snapshot queues, compute shares, retarget the pools."""

    def __init__(self, engine, config: SchedConfig, provider=None):
        self.engine = engine
        self.config = config
        self.provider = provider
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="scheduler", daemon=True)
        self.ticks = 0

    def snapshot(self) -> SchedulerSnapshot:
        e = self.engine
        q1, q2 = e.queues["p1"], e.queues["p2scan"]
        loads = (
            PassLoad(len(q1), 1, self.config.weight_inodes, elements=q1.elements()),
            PassLoad(len(q2), 1, self.config.weight_dir_blocks, elements=q2.elements()),
        )
        return SchedulerSnapshot(loads, core_budget=min(e.budget, e.threads))

    def tick_once(self) -> None:
        e = self.engine
        if self.provider is not None:
            sample = self.provider.sample(e.active_workers())
            e.budget = core_budget(sample, e.budget, step=self.config.budget_step)
            e.events.emit("budget", tick=self.ticks, budget=e.budget,
                          busy=sample.busy_cores, total=sample.total_cores)
        if e.phase == "concurrent":
            snap = self.snapshot()
            t = assign_threads(snap)
            e.mgr.set_targets({"p1": t[0], "p2scan": t[1]}, tick=self.ticks)
        else:
            allowed = min(e.budget, e.threads)
            e.mgr.set_targets({e.phase: allowed}, tick=self.ticks)
        e.events.emit("tick", tick=self.ticks, phase=e.phase)
        self.ticks += 1

    def _loop(self) -> None:
        while not self._stop.wait(self.config.tick_s):
            if self.engine.done:
                return
            self.tick_once()

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)
