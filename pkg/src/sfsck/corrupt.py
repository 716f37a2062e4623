"""Recorded corruption injection for detection-rate testing.

Each record captures the pre- and post-corruption bytes of one region, so a
ledger can be replayed to restore the pristine image exactly.  Records never
overlap; regions are block-granular for directory corruption (the tail
checksum is recomputed, so the whole block belongs to one record) and
inode-granular for inode corruption.

Injection is deterministic in (plan, seed).  Bitmap flips are applied after
all structural corruptions so a flip can never land on a bit whose computed
value those corruptions (or their repairs) will change; this keeps every
record independently detectable.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NoEligibleTargetError
from .findings import Code
from .image import Image
from .layout import (
    BLOCK_SIZE, INODE_SIZE, ITYPE_DIR, ITYPE_REG, NDIRECT, Geometry, Inode,
    Malformation, iterate_dirents, write_dir_tail,
)


class Kind(Enum):
    BitmapBlockFlip = "BitmapBlockFlip"
    BitmapInodeFlip = "BitmapInodeFlip"
    InodeBadMode = "InodeBadMode"
    InodeBadPointer = "InodeBadPointer"
    InodeBadLinks = "InodeBadLinks"
    InodeBadChecksum = "InodeBadChecksum"
    DirentBadInode = "DirentBadInode"
    DirentBadRecLen = "DirentBadRecLen"
    DirBlockBadChecksum = "DirBlockBadChecksum"
    DuplicateBlockClaim = "DuplicateBlockClaim"
    OrphanDirectory = "OrphanDirectory"


# serial-report code each kind is guaranteed to produce
DETECTED_AS: dict[Kind, Code] = {
    Kind.BitmapBlockFlip: Code.BlockBitmapMismatch,
    Kind.BitmapInodeFlip: Code.InodeBitmapMismatch,
    Kind.InodeBadMode: Code.BadMode,
    Kind.InodeBadPointer: Code.PointerOutOfRange,
    Kind.InodeBadLinks: Code.WrongLinksCount,
    Kind.InodeBadChecksum: Code.BadInodeChecksum,
    Kind.DirentBadInode: Code.DanglingDirent,
    Kind.DirentBadRecLen: Code.BadDirent,
    Kind.DirBlockBadChecksum: Code.BadDirChecksum,
    Kind.DuplicateBlockClaim: Code.MultiplyClaimedBlock,
    Kind.OrphanDirectory: Code.UnreachableDirectory,
}


@dataclass
class CorruptionRecord:
    kind: Kind
    inode: int
    block: int
    offset: int  # absolute byte offset of the rewritten region
    original: bytes
    corrupted: bytes
    detail: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind.value,
            "inode": self.inode,
            "block": self.block,
            "offset": self.offset,
            "original": self.original.hex(),
            "corrupted": self.corrupted.hex(),
            "detail": self.detail,
        })


@dataclass
class CorruptionLedger:
    records: list[CorruptionRecord] = field(default_factory=list)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            for r in self.records:
                f.write(r.to_json() + "\n")

    @classmethod
    def load(cls, path: str) -> "CorruptionLedger":
        led = cls()
        with open(path) as f:
            for line in f:
                d = json.loads(line)
                led.records.append(CorruptionRecord(
                    kind=Kind(d["kind"]), inode=d["inode"], block=d["block"],
                    offset=d["offset"], original=bytes.fromhex(d["original"]),
                    corrupted=bytes.fromhex(d["corrupted"]), detail=d["detail"]))
        return led

    def replay_original(self, image: Image) -> None:
        """Restore the pristine image byte-for-byte."""
        for r in self.records:
            image.write_at(r.offset, r.original)


class _Surveyor:
    """Deterministic view of a pristine image's objects, for target picking."""

    def __init__(self, image: Image, geom: Geometry):
        self.image = image
        self.geom = geom
        self.inodes: dict[int, Inode] = {}
        self.files: list[int] = []
        self.dirs: list[int] = []
        for ino in range(2, geom.total_inodes):
            raw = image.read_at(geom.inode_offset(ino), INODE_SIZE)
            inode = Inode.unpack(raw)
            if not inode.in_use:
                continue
            self.inodes[ino] = inode
            if inode.itype == ITYPE_REG:
                self.files.append(ino)
            elif inode.itype == ITYPE_DIR:
                self.dirs.append(ino)

    def file_blocks(self, ino: int) -> list[int]:
        inode = self.inodes[ino]
        blocks = [b for b in inode.direct if b]
        if inode.indirect:
            entries = np.frombuffer(self.image.read_block(inode.indirect), dtype="<u8")
            blocks += [int(b) for b in entries[entries != 0]]
        return blocks

    def dir_blocks(self, ino: int) -> list[int]:
        return self.file_blocks(ino)

    def free_inodes(self, limit: int = 64) -> list[int]:
        out = []
        for ino in range(4, self.geom.total_inodes):
            if ino not in self.inodes:
                out.append(ino)
                if len(out) >= limit:
                    break
        return out

    def live_entries(self, d: int, blk: int):
        """(offset, inode, rec_len, name, file_type) of live non-dot entries."""
        out = []
        for e in iterate_dirents(self.image.read_block(blk)):
            if isinstance(e, Malformation):
                break
            if e.live and e.name not in (b".", b".."):
                out.append(e)
        return out


class _Planner:
    def __init__(self, image: Image, geom: Geometry, rng: random.Random):
        self.image = image
        self.geom = geom
        self.rng = rng
        self.survey = _Surveyor(image, geom)
        self.intervals: list[tuple[int, int]] = []
        self.flip_excluded_blocks: set[int] = set()
        self.flip_excluded_inodes: set[int] = set()
        # repairs allocate the lowest free blocks; keep flips away from them
        free = []
        bb = np.frombuffer(image.read_at(geom.block_bitmap_offset(),
                                         (geom.total_blocks + 7) // 8), dtype=np.uint8)
        for b in range(geom.first_data_block, geom.total_blocks):
            if not bb[b >> 3] & (1 << (b & 7)):
                free.append(b)
                if len(free) >= 64:
                    break
        self.flip_excluded_blocks.update(free)

    def reserve(self, start: int, length: int) -> bool:
        end = start + length
        for s, e in self.intervals:
            if start < e and s < end:
                return False
        self.intervals.append((start, end))
        return True

    def pick(self, candidates: list):
        """Deterministic shuffled order over a candidate list."""
        cands = list(candidates)
        self.rng.shuffle(cands)
        return cands


def _rewrite_inode(image: Image, geom: Geometry, ino: int, mutate) -> tuple[int, bytes, bytes]:
    off = geom.inode_offset(ino)
    original = image.read_at(off, INODE_SIZE)
    inode = Inode.unpack(original)
    mutate(inode)
    corrupted = inode.pack()
    image.write_at(off, corrupted)
    return off, original, corrupted


def _rewrite_dir_block(image: Image, blk: int, mutate, fix_tail: bool = True) -> tuple[int, bytes, bytes]:
    off = blk * BLOCK_SIZE
    original = image.read_block(blk)
    buf = bytearray(original)
    mutate(buf)
    if fix_tail:
        write_dir_tail(buf)
    corrupted = bytes(buf)
    image.write_block(blk, corrupted)
    return off, original, corrupted


def inject_corruptions(image: Image, plan: list[tuple[Kind, int]],
                       seed: int) -> CorruptionLedger:
    """Apply the planned corruption counts; returns the replayable ledger."""
    geom = image.geometry()
    rng = random.Random(seed)
    planner = _Planner(image, geom, rng)
    ledger = CorruptionLedger()

    structural = [(k, n) for k, n in plan if k not in
                  (Kind.BitmapBlockFlip, Kind.BitmapInodeFlip)]
    flips = [(k, n) for k, n in plan if k in
             (Kind.BitmapBlockFlip, Kind.BitmapInodeFlip)]
    for kind, n in structural + flips:
        for _ in range(n):
            rec = _inject_one(image, geom, planner, kind)
            ledger.records.append(rec)
    return ledger


def _inject_one(image: Image, geom: Geometry, planner: _Planner,
                kind: Kind) -> CorruptionRecord:
    rng = planner.rng
    survey = planner.survey

    if kind is Kind.InodeBadMode:
        for ino in planner.pick(survey.files):
            off = geom.inode_offset(ino)
            if not planner.reserve(off, INODE_SIZE):
                continue
            o, orig, cor = _rewrite_inode(image, geom, ino,
                                          lambda i: setattr(i, "mode", (0x3 << 12) | (i.mode & 0xFFF)))
            planner.flip_excluded_inodes.add(ino)
            planner.flip_excluded_blocks.update(survey.file_blocks(ino))
            return CorruptionRecord(kind, ino, 0, o, orig, cor, "type nibble set to 0x3")
        raise NoEligibleTargetError("no regular file available for InodeBadMode")

    if kind is Kind.InodeBadPointer:
        for ino in planner.pick(survey.files):
            inode = survey.inodes[ino]
            slots = [j for j in range(NDIRECT) if inode.direct[j]]
            if not slots:
                continue
            off = geom.inode_offset(ino)
            if not planner.reserve(off, INODE_SIZE):
                continue
            slot = rng.choice(slots)
            bogus = geom.total_blocks + 1 + rng.randrange(1000)
            old_block = inode.direct[slot]

            def mut(i, slot=slot, bogus=bogus):
                i.direct[slot] = bogus
            o, orig, cor = _rewrite_inode(image, geom, ino, mut)
            planner.flip_excluded_blocks.add(old_block)
            return CorruptionRecord(kind, ino, bogus, o, orig, cor,
                                    f"direct slot {slot} -> {bogus}")
        raise NoEligibleTargetError("no file with data blocks for InodeBadPointer")

    if kind is Kind.InodeBadLinks:
        # strictly increase links_count; interactions only lower reference
        # counts, so the mismatch always survives.  Root and lost+found can
        # legitimately gain references from reconnections: excluded.
        cands = [i for i in survey.files + survey.dirs if i > 3]
        for ino in planner.pick(sorted(cands)):
            off = geom.inode_offset(ino)
            if not planner.reserve(off, INODE_SIZE):
                continue
            delta = 1 + rng.randrange(5)

            def mut(i, delta=delta):
                i.links_count = min(0xFFFF, i.links_count + delta)
            o, orig, cor = _rewrite_inode(image, geom, ino, mut)
            return CorruptionRecord(kind, ino, 0, o, orig, cor, f"links_count +{delta}")
        raise NoEligibleTargetError("no inode available for InodeBadLinks")

    if kind is Kind.InodeBadChecksum:
        cands = [i for i in sorted(survey.inodes) if i > 3]
        for ino in planner.pick(cands):
            off = geom.inode_offset(ino)
            if not planner.reserve(off, INODE_SIZE):
                continue
            original = image.read_at(off, INODE_SIZE)
            buf = bytearray(original)
            stored = struct.unpack_from("<I", buf, 112)[0]
            struct.pack_into("<I", buf, 112, stored ^ 0xDEADBEEF)
            image.write_at(off, bytes(buf))
            return CorruptionRecord(kind, ino, 0, off, original, bytes(buf),
                                    "checksum xor 0xDEADBEEF")
        raise NoEligibleTargetError("no inode available for InodeBadChecksum")

    if kind in (Kind.DirentBadInode, Kind.DirentBadRecLen, Kind.DirBlockBadChecksum,
                Kind.OrphanDirectory):
        return _inject_dir_kind(image, geom, planner, kind)

    if kind is Kind.DuplicateBlockClaim:
        owners = [i for i in survey.files if survey.file_blocks(i)]
        for a in planner.pick(owners):
            inode_a = survey.inodes[a]
            slots = [j for j in range(NDIRECT) if inode_a.direct[j]]
            if not slots:
                continue
            off_a = geom.inode_offset(a)
            if not planner.reserve(off_a, INODE_SIZE):
                continue
            bvic = None
            for cand in planner.pick([b for b in owners if b != a]):
                if planner.reserve(geom.inode_offset(cand), INODE_SIZE):
                    bvic = cand
                    break
            if bvic is None:
                planner.intervals.pop()  # undo the reservation on a
                continue
            slot = rng.choice(slots)
            target = rng.choice(survey.file_blocks(bvic))
            displaced = inode_a.direct[slot]

            def mut(i, slot=slot, target=target):
                i.direct[slot] = target
            o, orig, cor = _rewrite_inode(image, geom, a, mut)
            planner.flip_excluded_blocks.add(displaced)
            return CorruptionRecord(kind, a, target, o, orig, cor,
                                    f"inode_a={a} inode_b={bvic} block={target}")
        raise NoEligibleTargetError("need two files with data blocks for DuplicateBlockClaim")

    if kind is Kind.BitmapBlockFlip:
        cands = [b for b in range(geom.total_blocks)
                 if b not in planner.flip_excluded_blocks]
        for b in planner.pick(cands):
            off = geom.block_bitmap_offset() + (b >> 3)
            if not planner.reserve(off, 1):
                continue
            original = image.read_at(off, 1)
            cor = bytes([original[0] ^ (1 << (b & 7))])
            image.write_at(off, cor)
            return CorruptionRecord(kind, 0, b, off, original, cor, f"flip block bit {b}")
        raise NoEligibleTargetError("no block bit available for BitmapBlockFlip")

    if kind is Kind.BitmapInodeFlip:
        cands = [i for i in range(geom.total_inodes)
                 if i not in planner.flip_excluded_inodes]
        for i in planner.pick(cands):
            off = geom.inode_bitmap_offset() + (i >> 3)
            if not planner.reserve(off, 1):
                continue
            original = image.read_at(off, 1)
            cor = bytes([original[0] ^ (1 << (i & 7))])
            image.write_at(off, cor)
            return CorruptionRecord(kind, i, 0, off, original, cor, f"flip inode bit {i}")
        raise NoEligibleTargetError("no inode bit available for BitmapInodeFlip")

    raise ValueError(f"unknown corruption kind {kind}")


def _inject_dir_kind(image: Image, geom: Geometry, planner: _Planner,
                     kind: Kind) -> CorruptionRecord:
    rng = planner.rng
    survey = planner.survey
    dir_blocks: list[tuple[int, int]] = []
    for d in survey.dirs:
        for blk in survey.dir_blocks(d):
            dir_blocks.append((d, blk))

    if kind is Kind.DirBlockBadChecksum:
        for d, blk in planner.pick(dir_blocks):
            off = blk * BLOCK_SIZE
            if not planner.reserve(off, BLOCK_SIZE):
                continue

            def mut(buf):
                stored = struct.unpack_from("<I", buf, 4092)[0]
                struct.pack_into("<I", buf, 4092, stored ^ 0x5A5A5A5A)
            o, orig, cor = _rewrite_dir_block(image, blk, mut, fix_tail=False)
            return CorruptionRecord(kind, d, blk, o, orig, cor, "tail checksum xor 0x5A5A5A5A")
        raise NoEligibleTargetError("no directory block for DirBlockBadChecksum")

    if kind is Kind.DirentBadInode:
        for d, blk in planner.pick(dir_blocks):
            off = blk * BLOCK_SIZE
            entries = [e for e in survey.live_entries(d, blk)
                       if e.file_type == 1]  # regular targets keep the cascade tame
            free = survey.free_inodes()
            if not entries or not free:
                continue
            if not planner.reserve(off, BLOCK_SIZE):
                continue
            e = rng.choice(entries)
            ghost = rng.choice(free)

            def mut(buf, e=e, ghost=ghost):
                struct.pack_into("<Q", buf, e.offset, ghost)
            o, orig, cor = _rewrite_dir_block(image, blk, mut)
            return CorruptionRecord(kind, d, blk, o, orig, cor,
                                    f"entry at {e.offset} -> free inode {ghost} (was {e.inode})")
        raise NoEligibleTargetError("no live file entry for DirentBadInode")

    if kind is Kind.DirentBadRecLen:
        for d, blk in planner.pick(dir_blocks):
            off = blk * BLOCK_SIZE
            entries = survey.live_entries(d, blk)
            if not entries:
                continue
            if not planner.reserve(off, BLOCK_SIZE):
                continue
            e = rng.choice(entries)

            def mut(buf, e=e):
                struct.pack_into("<H", buf, e.offset + 8, 6)
            o, orig, cor = _rewrite_dir_block(image, blk, mut)
            return CorruptionRecord(kind, d, blk, o, orig, cor,
                                    f"entry at {e.offset} rec_len -> 6")
        raise NoEligibleTargetError("no live entry for DirentBadRecLen")

    if kind is Kind.OrphanDirectory:
        # clear the dirent that links a directory from its parent
        for d, blk in planner.pick(dir_blocks):
            off = blk * BLOCK_SIZE
            entries = [e for e in survey.live_entries(d, blk) if e.file_type == 2]
            if not entries:
                continue
            if not planner.reserve(off, BLOCK_SIZE):
                continue
            e = rng.choice(entries)

            def mut(buf, e=e):
                rec = e.rec_len
                buf[e.offset:e.offset + rec] = b"\x00" * rec
                struct.pack_into("<H", buf, e.offset + 8, rec)
            o, orig, cor = _rewrite_dir_block(image, blk, mut)
            return CorruptionRecord(kind, e.inode, blk, o, orig, cor,
                                    f"cleared dirent for dir {e.inode} in parent {d}")
        raise NoEligibleTargetError("no subdirectory entry for OrphanDirectory")

    raise ValueError(kind)
