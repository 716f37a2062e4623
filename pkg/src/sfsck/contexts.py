"""Per-worker state: each live worker owns one context exclusively.

Workers fold kernel results into their private context; merging the contexts
between passes reproduces the serial shadow state exactly, which is what
makes the parallel modes byte-equal to the oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cache import BlockCache
from .kernels import CertifyResult, Pass1Result
from .layout import Geometry
from .shadow import ShadowState, apply_claims, make_bitset


@dataclass
class ThreadContext:
    worker_id: int
    geom: Geometry
    cache: BlockCache | None = None
    claimed_blocks: np.ndarray = field(init=False)
    multi_blocks: np.ndarray = field(init=False)
    inuse_chunks: list[np.ndarray] = field(default_factory=list)
    dir_chunks: list[np.ndarray] = field(default_factory=list)
    db_chunks: list[np.ndarray] = field(default_factory=list)
    icount: np.ndarray = field(init=False)
    parent_claims: list[tuple[int, int, int, int]] = field(default_factory=list)
    dotdot: dict[int, tuple[int, int, int]] = field(default_factory=dict)
    scanned_dirs: set[int] = field(default_factory=set)
    stats: dict = field(default_factory=dict)
    p5_block_mismatch: list[int] = field(default_factory=list)
    p5_inode_mismatch: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.claimed_blocks = make_bitset(self.geom.total_blocks)
        self.multi_blocks = make_bitset(self.geom.total_blocks)
        self.icount = np.zeros(self.geom.total_inodes, dtype=np.int64)

    def bump(self, key: str, n: int = 1) -> None:
        self.stats[key] = self.stats.get(key, 0) + n

    def integrate_pass1(self, res: Pass1Result) -> None:
        apply_claims(self.claimed_blocks, self.multi_blocks, res.claims)
        if len(res.inuse):
            self.inuse_chunks.append(res.inuse)
        if len(res.dirs):
            self.dir_chunks.append(res.dirs)
        if len(res.db):
            self.db_chunks.append(res.db)
        self.bump("pass1_inodes", res.count)

    def integrate_certify(self, res: CertifyResult) -> None:
        if len(res.icount_inc):
            np.add.at(self.icount, res.icount_inc, 1)
        self.parent_claims.extend(res.parent_claims)
        if res.dotdot is not None:
            cur = self.dotdot.get(res.dir_ino)
            cand = res.dotdot
            if cur is None or (cand[1], cand[2]) < (cur[1], cur[2]):
                self.dotdot[res.dir_ino] = cand
        self.scanned_dirs.add(res.dir_ino)
        self.bump("pass2_blocks")


def merge_pass1_contexts(state: ShadowState, contexts: list[ThreadContext]) -> None:
    """OR claim bitmaps (cross-context repeats become multi), union the rest."""
    for ctx in contexts:
        cross = state.claimed_blocks & ctx.claimed_blocks
        state.multi_blocks |= ctx.multi_blocks
        state.multi_blocks |= cross
        state.claimed_blocks |= ctx.claimed_blocks
        for chunk in ctx.inuse_chunks:
            state.claim_inodes_bulk(chunk)
        state.dir_chunks.extend(ctx.dir_chunks)
        state.db_chunks.extend(ctx.db_chunks)
        for k, v in ctx.stats.items():
            if k.startswith("pass1"):
                state.stats[k] = state.stats.get(k, 0) + v


def merge_certify_contexts(state: ShadowState, contexts: list[ThreadContext]) -> None:
    for ctx in contexts:
        state.icount += ctx.icount
        state.parent_claims.extend(ctx.parent_claims)
        for d, cand in ctx.dotdot.items():
            cur = state.dotdot.get(d)
            if cur is None or (cand[1], cand[2]) < (cur[1], cur[2]):
                state.dotdot[d] = cand
        state.scanned_dirs.update(ctx.scanned_dirs)
        for k, v in ctx.stats.items():
            if k.startswith("pass2"):
                state.stats[k] = state.stats.get(k, 0) + v
