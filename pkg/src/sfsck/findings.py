"""Findings and reports.

A Report's findings are kept as a multiset in canonical order: sorted by
(pass, code, inode, block, offset).  The canonical serialization covers the
findings only, so reports from different run modes compare byte-for-byte;
per-pass statistics and wall times are informational and excluded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum


class Code(IntEnum):
    BadInodeChecksum = 1
    BadMode = 2
    PointerOutOfRange = 3
    MultiplyClaimedBlock = 4
    BadDirChecksum = 5
    BadDirent = 6
    DanglingDirent = 7
    DotDotMismatch = 8
    UnreachableDirectory = 9
    WrongLinksCount = 10
    ZeroLinkInUse = 11
    BlockBitmapMismatch = 12
    InodeBitmapMismatch = 13
    FreeCountMismatch = 14


class Repair(IntEnum):
    RecomputedChecksum = 1
    ClearedInode = 2
    ZeroedPointer = 3
    ClearedDirent = 4
    RewroteFileType = 5
    RewroteDotEntry = 6
    RewroteDotDot = 7
    TruncatedEntries = 8
    Reconnected = 9
    RewroteLinksCount = 10
    RewroteBitmap = 11
    RewroteFreeCount = 12


@dataclass(frozen=True)
class Finding:
    pass_no: int
    code: Code
    inode: int = 0
    block: int = 0
    offset: int = 0
    detail: str = ""
    repair: Repair | None = None

    def sort_key(self):
        return (self.pass_no, int(self.code), self.inode, self.block,
                self.offset, self.detail)

    def to_line(self) -> str:
        repair = self.repair.name if self.repair else "-"
        return (f"P{self.pass_no} {self.code.name} ino={self.inode} "
                f"blk={self.block} off={self.offset} repair={repair} :: {self.detail}")

    def to_json(self) -> str:
        return json.dumps({
            "pass": self.pass_no,
            "code": self.code.name,
            "inode": self.inode,
            "block": self.block,
            "offset": self.offset,
            "repair": self.repair.name if self.repair else None,
            "detail": self.detail,
        })


@dataclass
class Report:
    findings: list[Finding] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)

    def add(self, finding: Finding) -> None:
        self.findings.append(finding)

    def canonical(self) -> list[Finding]:
        return sorted(self.findings, key=Finding.sort_key)

    def canonical_bytes(self) -> bytes:
        lines = [f.to_line() for f in self.canonical()]
        return ("\n".join([f"findings {len(lines)}"] + lines) + "\n").encode()

    def count(self, code: Code) -> int:
        return sum(1 for f in self.findings if f.code == code)

    def has(self, code: Code, inode: int | None = None, block: int | None = None) -> bool:
        for f in self.findings:
            if f.code != code:
                continue
            if inode is not None and f.inode != inode:
                continue
            if block is not None and f.block != block:
                continue
            return True
        return False

    def to_text(self) -> str:
        out = [f.to_line() for f in self.canonical()]
        out.append(f"total findings: {len(self.findings)}")
        for key in sorted(self.stats):
            out.append(f"stat {key}: {self.stats[key]}")
        for key in sorted(self.wall_times):
            out.append(f"wall {key}: {self.wall_times[key]:.6f}s")
        return "\n".join(out) + "\n"

    def to_jsonl(self) -> str:
        lines = [f.to_json() for f in self.canonical()]
        lines.append(json.dumps({"record": "summary", "findings": len(self.findings),
                                 "stats": self.stats}))
        return "\n".join(lines) + "\n"
