"""Parallel check engine.

Worker threads draw items from per-pass queues and fold kernel results into
private contexts; contexts merge at phase gates.  In pipeline mode the inode
pass feeds discovered directory blocks to the directory pool live, while the
checks that depend on fully-checked inodes (dirent certification, dot-dot
verification) are deferred until the inode queue closes and drains.  Repairs
that touch the shared image go through a stop-the-world gate and are applied
in canonical finding order, so every mode produces the same report bytes and
repaired image as the serial oracle.

The dynamic scheduler retargets the pools from queue lengths each tick;
static splits only constrain the concurrent phase, later phases use every
allowed worker.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cache import BlockCache, CacheConfig, HINT_DIR_SCAN
from .contexts import ThreadContext, merge_certify_contexts, merge_pass1_contexts
from .events import EventLog
from .findings import Report
from .image import Image
from .kernels import DotDotItem, scan_dir_checksum, verify_dotdot_repair
from .passes import (
    DEFAULT_GRANULARITY, build_dotdot_items, compare_bitmap_chunk, finish_pass1,
    pass3_connectivity, pass4_refcounts, pass5_apply, pass5_read_disk_bitmaps,
    resolve_multiclaims,
)
from .procpool import InlineKernels, ProcessKernels
from .queues import (
    CLOSED, TIMEOUT, DeferredCheck, DirBlock, WorkQueue, partition_inodes,
)
from .scheduler import SchedConfig, SchedulerThread
from .shadow import ShadowState

PROCESS_EXEC_MIN_INODES = 100_000
ROLE_ORDER = ("p1", "p2scan", "certify", "dotdot", "p5")


@dataclass
class RunOptions:
    granularity: int = DEFAULT_GRANULARITY
    exec_mode: str = "auto"  # inline | process | auto
    cache: CacheConfig | None = field(default_factory=CacheConfig)
    sched: SchedConfig = field(default_factory=SchedConfig)
    utilization: object | None = None  # provider for rsched
    item_events: bool = False
    trace_path: str | None = None
    idle_priority: bool = False
    certify_batch: int = 64


@dataclass(frozen=True)
class P5Chunk:
    kind: str  # "blocks" | "inodes"
    byte_start: int
    byte_end: int

    @property
    def elements(self) -> int:
        return self.byte_end - self.byte_start


class RepairGate:
    """Stop-the-world repair application.

    The first worker to submit findings becomes the applier: it waits for
    every other in-flight worker to quiesce, applies all pending repairs in
    canonical order, invalidates the written blocks in every worker cache,
    and resumes the pools.  A clean run never engages the gate.
    """

    def __init__(self, engine: "Engine"):
        self.engine = engine
        self._cond = threading.Condition()
        self._processing = 0
        self._stalled = False
        self._aborted = False
        self._pending: list[tuple[list, list]] = []
        self.written_blocks: set[int] = set()
        self.barriers = 0

    def enter_item(self) -> None:
        with self._cond:
            self._cond.wait_for(lambda: not self._stalled or self._aborted)
            self._processing += 1

    def exit_item(self) -> None:
        with self._cond:
            self._processing -= 1
            self._cond.notify_all()

    def checkpoint(self) -> None:
        with self._cond:
            self._cond.wait_for(lambda: not self._stalled or self._aborted)

    def abort(self) -> None:
        with self._cond:
            self._aborted = True
            self._stalled = False
            self._cond.notify_all()

    def submit(self, findings: list, edits: list) -> None:
        unit = (findings, edits)
        with self._cond:
            self._pending.append(unit)
            if self._aborted:
                return
            if self._stalled:
                # another worker is applying; stand down and let it take ours
                self._processing -= 1
                self._cond.notify_all()
                self._cond.wait_for(lambda: not self._stalled or self._aborted)
                self._processing += 1
                return
            self._stalled = True
            self._processing -= 1
            self._cond.notify_all()
            self._cond.wait_for(lambda: self._processing == 0 or self._aborted)
            units = sorted(self._pending,
                           key=lambda u: min(f.sort_key() for f in u[0]))
            self._pending.clear()
            self.barriers += 1
            self.engine.events.emit("barrier", pending=len(units))
            for unit_findings, unit_edits in units:
                self._apply(unit_findings, unit_edits)
            self._processing += 1
            self._stalled = False
            self._cond.notify_all()

    def apply_central(self, findings: list, edits: list) -> None:
        """Apply from the coordinator while the pools are between phases."""
        with self._cond:
            self._apply(findings, edits)

    def _apply(self, findings: list, edits: list) -> None:
        engine = self.engine
        for e in edits:
            engine.image.write_at(e.offset, e.data)
            self.written_blocks.add(e.block)
            for ctx in engine.contexts:
                if ctx.cache is not None:
                    ctx.cache.invalidate(e.block)
        engine.report.findings.extend(findings)
        for f in findings:
            engine.events.emit_item("repair", code=f.code.name, inode=f.inode,
                                    block=f.block)


class PoolManager:
    """Assigns workers to roles to match the current targets.

    Workers re-ask after every item; surplus workers above a role's target
    finish their current item and move to the neediest role, idle workers
    wait for targets to change.
    """

    def __init__(self, engine: "Engine"):
        self.engine = engine
        self._cond = threading.Condition()
        self.targets: dict[str, int] = {}
        self.counts: dict[str, int] = {r: 0 for r in ROLE_ORDER}
        self.assigned: dict[int, str | None] = {}
        self.stopping = False

    def set_targets(self, targets: dict[str, int], tick=None) -> None:
        with self._cond:
            self.targets = dict(targets)
            self._cond.notify_all()
        self.engine.events.emit("assign", targets=dict(targets), tick=tick)

    def acquire(self, wid: int) -> str | None:
        with self._cond:
            while True:
                if self.stopping:
                    self._release(wid)
                    return None
                cur = self.assigned.get(wid)
                if cur is not None:
                    q = self.engine.queues[cur]
                    if self.targets.get(cur, 0) >= self.counts[cur] and not q.drained.is_set():
                        return cur
                    self.counts[cur] -= 1
                    self.assigned[wid] = None
                prev = cur
                for role in ROLE_ORDER:
                    if (self.targets.get(role, 0) > self.counts[role]
                            and not self.engine.queues[role].drained.is_set()):
                        self.counts[role] += 1
                        self.assigned[wid] = role
                        if prev is not None and prev != role:
                            self.engine.events.emit("migrate", worker=wid,
                                                    src=prev, dst=role)
                        else:
                            self.engine.events.emit_item("worker_role", worker=wid,
                                                         dst=role)
                        return role
                self._cond.wait(0.01)

    def park(self, wid: int) -> None:
        with self._cond:
            self._release(wid)

    def _release(self, wid: int) -> None:
        cur = self.assigned.get(wid)
        if cur is not None:
            self.counts[cur] -= 1
            self.assigned[wid] = None

    def active(self) -> int:
        with self._cond:
            return sum(self.counts.values())

    def stop(self) -> None:
        with self._cond:
            self.stopping = True
            self._cond.notify_all()


class Worker(threading.Thread):
    def __init__(self, engine: "Engine", wid: int):
        super().__init__(name=f"worker-{wid}", daemon=True)
        self.engine = engine
        self.wid = wid

    def run(self) -> None:
        engine = self.engine
        ctx = engine.contexts[self.wid]
        try:
            while True:
                role = engine.mgr.acquire(self.wid)
                if role is None:
                    return
                q = engine.queues[role]
                batch = engine.batch_limit(role)
                got = q.get_many(batch) if batch > 1 else q.get()
                if got is CLOSED:
                    engine.mgr.park(self.wid)
                    continue
                if got is TIMEOUT:
                    engine.gate.checkpoint()
                    continue
                items = got if isinstance(got, list) else [got]
                engine.gate.enter_item()
                try:
                    engine.process(ctx, role, items)
                finally:
                    engine.gate.exit_item()
                q.task_done(len(items))
                engine.gate.checkpoint()
        except BaseException as exc:  # noqa: BLE001 - surfaced to the coordinator
            engine.worker_error = exc
            engine.gate.abort()
            engine.mgr.stop()


class Engine:
    def __init__(self, image: Image, threads: int, opts: RunOptions | None,
                 mode: str, split: tuple[int, int] | None = None):
        if threads < 1:
            raise ValueError("threads must be >= 1")
        self.opts = opts or RunOptions()
        self.image = image
        self.geom = image.geometry()
        self.mode = mode
        self.threads = threads
        self.split = split
        self.state = ShadowState(self.geom)
        self.report = Report()
        self.events = EventLog(item_level=self.opts.item_events)
        self.queues = {name: WorkQueue(name, self.events) for name in ROLE_ORDER}
        self.gate = RepairGate(self)
        self.mgr = PoolManager(self)
        self.budget = threads
        self.phase = "concurrent"
        self.done = False
        self.worker_error: BaseException | None = None
        self.scan_verdicts: dict[tuple[int, int], bool] = {}
        self._scan_lock = threading.Lock()

        cache_cfg = self.opts.cache
        self.contexts = [
            ThreadContext(i, self.geom,
                          cache=BlockCache(image, replace(cache_cfg)) if cache_cfg else None)
            for i in range(threads)
        ]

        exec_mode = self.opts.exec_mode
        if exec_mode == "auto":
            exec_mode = ("process" if image.path and threads >= 2
                         and self.geom.total_inodes >= PROCESS_EXEC_MIN_INODES else "inline")
        if exec_mode == "process" and not image.path:
            exec_mode = "inline"
        self.exec_mode = exec_mode
        self.inline = InlineKernels(image, self.geom)
        self.pool = None
        if exec_mode == "process":
            # the pool must fork before any worker thread exists
            self.pool = ProcessKernels(image.path, threads)

        self.scheduler: SchedulerThread | None = None
        if mode in ("sched", "rsched"):
            provider = self.opts.utilization if mode == "rsched" else None
            self.scheduler = SchedulerThread(self, self.opts.sched, provider)

        self.workers = [Worker(self, i) for i in range(threads)]

    # -- worker-side dispatch ------------------------------------------------

    def batch_limit(self, role: str) -> int:
        if role == "certify":
            return self.opts.certify_batch if self.exec_mode == "process" else 1
        return 1

    def active_workers(self) -> int:
        return self.mgr.active()

    def process(self, ctx: ThreadContext, role: str, items: list) -> None:
        if role == "p1":
            for item in items:
                if self.pool is not None:
                    res = self.pool.pass1(item.first, item.count)
                else:
                    res = self.inline.pass1(item.first, item.count, ctx)
                if res.findings:
                    self.gate.submit(res.findings, res.edits)
                ctx.integrate_pass1(res)
                if self.pipelined and len(res.db):
                    self.queues["p2scan"].put_many(
                        [DirBlock(d, b) for d, b in res.db.tolist()])
        elif role == "p2scan":
            for item in items:
                if ctx.cache is not None:
                    raw = ctx.cache.read_block(item.block, HINT_DIR_SCAN)
                else:
                    raw = self.image.read_block(item.block)
                ok = scan_dir_checksum(raw)
                with self._scan_lock:
                    self.scan_verdicts[(item.dir_ino, item.block)] = ok
                ctx.bump("scan_blocks")
        elif role == "certify":
            batch = []
            for it in items:
                d, blk, verdict = it.subject
                if blk in self.gate.written_blocks:
                    verdict = None  # repaired since the scan: recheck
                batch.append((d, blk, verdict))
            if self.pool is not None:
                results = self.pool.certify_batch(batch)
            else:
                results = self.inline.certify_batch(batch, ctx)
            for res in results:
                if res.findings:
                    self.gate.submit(res.findings, res.edits)
                ctx.integrate_certify(res)
                self.events.emit_item("certify", dir=res.dir_ino, block=res.block)
        elif role == "dotdot":
            for it in items:
                item: DotDotItem = it.subject
                if ctx.cache is not None:
                    raw = ctx.cache.read_block(item.block, HINT_DIR_SCAN)
                else:
                    raw = self.image.read_block(item.block)
                finding, edit = verify_dotdot_repair(item, raw)
                self.gate.submit([finding], [edit])
                self.events.emit_item("dotdot", dir=item.dir_ino)
        elif role == "p5":
            disk_bb, disk_ib = pass5_read_disk_bitmaps(self.image, self.geom)
            for chunk in items:
                if chunk.kind == "blocks":
                    ctx.p5_block_mismatch.extend(compare_bitmap_chunk(
                        disk_bb, self.state.claimed_blocks,
                        chunk.byte_start, chunk.byte_end, self.geom.total_blocks))
                else:
                    ctx.p5_inode_mismatch.extend(compare_bitmap_chunk(
                        disk_ib, self.state.claimed_inodes,
                        chunk.byte_start, chunk.byte_end, self.geom.total_inodes))
        else:
            raise ValueError(role)

    # -- coordination ----------------------------------------------------------

    @property
    def pipelined(self) -> bool:
        return self.mode != "datapara"

    def _await(self, event: threading.Event) -> None:
        while not event.wait(0.05):
            if self.worker_error is not None:
                raise self.worker_error

    def _enter_phase(self, phase: str) -> None:
        self.phase = phase
        allowed = min(self.budget, self.threads)
        self.mgr.set_targets({phase: allowed})

    def _initial_targets(self) -> dict[str, int]:
        if self.mode == "datapara":
            return {"p1": self.threads}
        if self.mode == "pipeline-split-manual":
            a, b = self.split
            return {"p1": a, "p2scan": b}
        if self.mode == "pipeline-split-equal":
            a = (self.threads + 1) // 2
            return {"p1": a, "p2scan": self.threads - a}
        return {}  # sched/rsched: tick 0 decides

    def run(self) -> Report:
        t_run = time.perf_counter()
        self.events.emit("run_begin", mode=self.mode, threads=self.threads,
                         exec=self.exec_mode)
        if self.opts.idle_priority:
            try:
                os.sched_setscheduler(0, os.SCHED_IDLE, os.sched_param(0))
            except (OSError, AttributeError):
                pass
        try:
            return self._run()
        finally:
            self.done = True
            if self.scheduler is not None:
                self.scheduler.stop()
            self.mgr.stop()
            for w in self.workers:
                w.join(timeout=10)
            if self.pool is not None:
                self.pool.close()
            self.events.emit("run_end", wall=time.perf_counter() - t_run)
            if self.opts.trace_path:
                self.events.dump(self.opts.trace_path)

    def _run(self) -> Report:
        image, geom, state, report = self.image, self.geom, self.state, self.report
        t0 = time.perf_counter()

        self.queues["p1"].put_many(partition_inodes(geom.total_inodes,
                                                    self.opts.granularity))
        self.queues["p1"].close()
        if not self.pipelined:
            self.queues["p2scan"].close()

        if self.scheduler is not None:
            self.scheduler.tick_once()  # all workers to the inode pass
        else:
            self.mgr.set_targets(self._initial_targets())
        for w in self.workers:
            w.start()
        if self.scheduler is not None:
            self.scheduler.start()

        self._await(self.queues["p1"].drained)
        if self.pipelined:
            # finish the remaining scans with every allowed worker (the
            # dynamic scheduler converges here on its own; static splits need
            # the nudge, e.g. a (1, 0) split has no scan workers at all)
            self.mgr.set_targets({"p2scan": min(self.budget, self.threads)})
            self.queues["p2scan"].close()
            self._await(self.queues["p2scan"].drained)
        t1 = time.perf_counter()

        merge_pass1_contexts(state, self.contexts)
        finish_pass1(state)
        written = resolve_multiclaims(image, geom, state, report)
        if written:
            self.gate.written_blocks.update(written)
            for ctx in self.contexts:
                if ctx.cache is not None:
                    for b in written:
                        ctx.cache.invalidate(b)

        items = []
        for d, blk in state.db_list:
            verdict = self.scan_verdicts.get((d, blk))
            items.append(DeferredCheck("certify", (d, blk, verdict)))
        self.queues["certify"].put_many(items)
        self.queues["certify"].close()
        self._enter_phase("certify")
        self._await(self.queues["certify"].drained)

        merge_certify_contexts(state, self.contexts)
        state.scanned_dirs.update(state.dirs)
        dd_items = [DeferredCheck("dotdot", it) for it in build_dotdot_items(state)]
        self.queues["dotdot"].put_many(dd_items)
        self.queues["dotdot"].close()
        self._enter_phase("dotdot")
        self._await(self.queues["dotdot"].drained)
        t2 = time.perf_counter()

        pass3_connectivity(image, geom, state, report)
        t3 = time.perf_counter()
        pass4_refcounts(image, geom, state, report)
        t4 = time.perf_counter()

        chunks = self._p5_chunks()
        self.queues["p5"].put_many(chunks)
        self.queues["p5"].close()
        self._enter_phase("p5")
        self._await(self.queues["p5"].drained)
        blocks = sorted(b for ctx in self.contexts for b in ctx.p5_block_mismatch)
        inodes = sorted(i for ctx in self.contexts for i in ctx.p5_inode_mismatch)
        pass5_apply(image, geom, state, report, blocks, inodes)
        t5 = time.perf_counter()

        report.stats.update(state.stats)
        cache_stats = {"hits": 0, "misses": 0, "evictions": 0}
        for ctx in self.contexts:
            if ctx.cache is not None:
                s = ctx.cache.stats()
                for k in cache_stats:
                    cache_stats[k] += s[k]
        if any(cache_stats.values()):
            report.stats["cache"] = cache_stats
        report.stats["barriers"] = self.gate.barriers
        for name, q in self.queues.items():
            if q.enqueued != q.dequeued or q.enqueued != q.done:
                raise RuntimeError(f"queue {name} lost work: "
                                   f"{q.enqueued}/{q.dequeued}/{q.done}")
        report.wall_times.update({
            "pass1": t1 - t0, "pass2": t2 - t1, "pass3": t3 - t2,
            "pass4": t4 - t3, "pass5": t5 - t4, "total": t5 - t0,
        })
        image.flush()
        return report

    def _p5_chunks(self) -> list[P5Chunk]:
        chunks = []
        for kind, nbits in (("blocks", self.geom.total_blocks),
                            ("inodes", self.geom.total_inodes)):
            nbytes = (nbits + 7) // 8
            step = max(1, nbytes // max(self.threads, 1))
            start = 0
            while start < nbytes:
                end = min(start + step, nbytes)
                chunks.append(P5Chunk(kind, start, end))
                start = end
        return chunks


def run_data_parallel(image: Image, threads: int, opts: RunOptions | None = None) -> Report:
    """Every pass data-parallel, strict pass boundaries."""
    return Engine(image, threads, opts, "datapara").run()


def run_pipeline(image: Image, threads: int, opts: RunOptions | None = None,
                 assignment: str | tuple[int, int] = "equal") -> Report:
    """Inode and directory passes run concurrently with deferred certification.

    ``assignment`` is "equal", an explicit (inode, directory) split, "sched"
    for the dynamic scheduler, or "rsched" to add resource awareness.
    """
    if isinstance(assignment, tuple):
        a, b = assignment
        if a + b != threads or a < 1 or b < 0:
            raise ValueError(f"split {assignment} needs p1 >= 1 and p1+p2 == threads")
        return Engine(image, threads, opts, "pipeline-split-manual", split=assignment).run()
    if assignment == "equal":
        return Engine(image, threads, opts, "pipeline-split-equal").run()
    if assignment in ("sched", "rsched"):
        return Engine(image, threads, opts, assignment).run()
    raise ValueError(f"unknown assignment {assignment!r}")


def run_mode(image: Image, mode: str, threads: int, opts: RunOptions | None = None,
             split: tuple[int, int] | None = None) -> Report:
    """Dispatch by run-mode name (CLI surface)."""
    from .passes import run_serial

    if mode == "serial":
        o = opts or RunOptions()
        cache = BlockCache(image, replace(o.cache)) if o.cache else None
        return run_serial(image, granularity=o.granularity, cache=cache)
    if mode == "datapara":
        return run_data_parallel(image, threads, opts)
    if mode == "pipeline-split-equal":
        return run_pipeline(image, threads, opts, "equal")
    if mode == "pipeline-split-manual":
        if split is None:
            raise ValueError("manual split requires a (p1, p2) thread split")
        return run_pipeline(image, threads, opts, split)
    if mode in ("sched", "rsched"):
        return run_pipeline(image, threads, opts, mode)
    raise ValueError(f"unknown mode {mode!r}")
