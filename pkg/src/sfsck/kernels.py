"""Pure check kernels for the inode and directory passes.

Each kernel turns raw metadata bytes into findings plus byte-level repair
edits; it never writes.  Callers apply the edits (single-threaded or inside a
repair barrier), which keeps results independent of where the kernel runs: in
the calling thread, in a worker thread, or in a worker process.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .findings import Code, Finding, Repair
from .layout import (
    BLOCK_SIZE, DIR_PAYLOAD, DIRENT_HEADER, FT_DIR, FT_FOR_ITYPE,
    INODE_SIZE, NDIRECT, VALID_ITYPES, Dirent, Geometry, Inode, Malformation,
    dir_block_checksum, inode_checksum, iterate_dirents, read_dir_tail,
    write_dir_tail, DIR_TAIL_MAGIC,
)

# pointer slot numbering used by repairs and duplicate-claim resolution:
# 0..9 direct, 10 the indirect pointer itself, 11+k entry k of the indirect block
SLOT_INDIRECT = NDIRECT
SLOT_ENTRY0 = NDIRECT + 1


def slot_file_index(slot: int) -> int:
    """File block index guarded by a pointer slot (for size shrinking)."""
    if slot < NDIRECT:
        return slot
    if slot == SLOT_INDIRECT:
        return NDIRECT
    return NDIRECT + (slot - SLOT_ENTRY0)


@dataclass
class Edit:
    offset: int
    data: bytes

    @property
    def block(self) -> int:
        return self.offset // BLOCK_SIZE


_EMPTY = np.empty(0, dtype=np.int64)
_EMPTY2 = np.empty((0, 2), dtype=np.int64)


@dataclass
class Pass1Result:
    """Arrays keep cross-process result traffic cheap to pickle."""
    first: int
    count: int
    findings: list[Finding] = field(default_factory=list)
    edits: list[Edit] = field(default_factory=list)
    claims: np.ndarray = field(default_factory=lambda: _EMPTY)
    inuse: np.ndarray = field(default_factory=lambda: _EMPTY)
    dirs: np.ndarray = field(default_factory=lambda: _EMPTY)
    db: np.ndarray = field(default_factory=lambda: _EMPTY2)  # (dir_ino, block) rows


def pass1_check_range(geom: Geometry, first: int, count: int,
                      read_at, read_block) -> Pass1Result:
    """Check inodes [first, first+count): checksum, mode, block pointers.

    Claims in the result reflect post-repair pointers, so out-of-range
    pointers never reach the claimed bitmap.
    """
    res = Pass1Result(first, count)
    table = read_at(geom.inode_offset(first), count * INODE_SIZE)
    claims: list[int] = []
    inuse: list[int] = []
    dirs: list[int] = []
    db: list[tuple[int, int]] = []
    lo, hi = geom.first_data_block, geom.total_blocks

    for i in range(count):
        ino = first + i
        raw = table[i * INODE_SIZE:(i + 1) * INODE_SIZE]
        inode = Inode.unpack(raw)
        if not inode.in_use:
            continue
        mode_ok = inode.itype in VALID_ITYPES
        cksum_ok = inode.checksum == inode_checksum(raw)
        computed = inode_checksum(raw)

        if not mode_ok:
            # nothing in this record can be trusted; release the slot
            repair = Repair.ClearedInode
            if not cksum_ok:
                res.findings.append(Finding(1, Code.BadInodeChecksum, inode=ino,
                                            detail=f"stored 0x{inode.checksum:08X} != computed 0x{computed:08X}",
                                            repair=repair))
            res.findings.append(Finding(1, Code.BadMode, inode=ino,
                                        detail=f"mode 0x{inode.mode:04X} has invalid type",
                                        repair=repair))
            res.edits.append(Edit(geom.inode_offset(ino), b"\x00" * INODE_SIZE))
            continue

        mutated = False
        if not inode.inline_symlink:
            for j in range(NDIRECT):
                b = inode.direct[j]
                if not b:
                    continue
                if lo <= b < hi:
                    claims.append(b)
                else:
                    res.findings.append(Finding(1, Code.PointerOutOfRange, inode=ino,
                                                block=b, offset=j,
                                                detail=f"direct slot {j} points at block {b}",
                                                repair=Repair.ZeroedPointer))
                    inode.direct[j] = 0
                    inode.size = min(inode.size, j * BLOCK_SIZE)
                    mutated = True
            ind = inode.indirect
            if ind:
                if not lo <= ind < hi:
                    res.findings.append(Finding(1, Code.PointerOutOfRange, inode=ino,
                                                block=ind, offset=SLOT_INDIRECT,
                                                detail=f"indirect pointer names block {ind}",
                                                repair=Repair.ZeroedPointer))
                    inode.indirect = 0
                    inode.size = min(inode.size, NDIRECT * BLOCK_SIZE)
                    mutated = True
                else:
                    claims.append(ind)
                    ind_raw = bytearray(read_block(ind))
                    entries = np.frombuffer(ind_raw, dtype="<u8")
                    ind_mutated = False
                    for k in np.flatnonzero(entries).tolist():
                        b = int(entries[k])
                        if lo <= b < hi:
                            claims.append(b)
                        else:
                            res.findings.append(Finding(1, Code.PointerOutOfRange, inode=ino,
                                                        block=b, offset=SLOT_ENTRY0 + k,
                                                        detail=f"indirect entry {k} points at block {b}",
                                                        repair=Repair.ZeroedPointer))
                            struct.pack_into("<Q", ind_raw, k * 8, 0)
                            inode.size = min(inode.size, (NDIRECT + k) * BLOCK_SIZE)
                            mutated = ind_mutated = True
                    if ind_mutated:
                        res.edits.append(Edit(ind * BLOCK_SIZE, bytes(ind_raw)))

        if not cksum_ok:
            res.findings.append(Finding(1, Code.BadInodeChecksum, inode=ino,
                                        detail=f"stored 0x{inode.checksum:08X} != computed 0x{computed:08X}",
                                        repair=Repair.RecomputedChecksum))
        if mutated or not cksum_ok:
            res.edits.append(Edit(geom.inode_offset(ino), inode.pack()))

        inuse.append(ino)
        if inode.is_dir:
            dirs.append(ino)
            seen: set[int] = set()
            for b in inode.direct:
                if b and lo <= b < hi and b not in seen:
                    seen.add(b)
                    db.append((ino, b))
            if inode.indirect:
                for k in np.flatnonzero(entries).tolist():
                    b = int(entries[k])
                    if lo <= b < hi and b not in seen:
                        seen.add(b)
                        db.append((ino, b))

    res.claims = np.array(claims, dtype=np.int64)
    res.inuse = np.array(inuse, dtype=np.int64)
    res.dirs = np.array(dirs, dtype=np.int64)
    res.db = np.array(db, dtype=np.int64).reshape(-1, 2)
    return res


# -- directory blocks ---------------------------------------------------------


@dataclass
class CertifyResult:
    dir_ino: int
    block: int
    findings: list[Finding] = field(default_factory=list)
    edits: list[Edit] = field(default_factory=list)
    icount_inc: np.ndarray = field(default_factory=lambda: _EMPTY)
    parent_claims: list[tuple[int, int, int, int]] = field(default_factory=list)
    dotdot: tuple[int, int, int] | None = None  # (target, block, offset)


def scan_dir_checksum(raw: bytes) -> bool:
    """Structural precheck a pipelined directory worker can run early."""
    magic, stored = read_dir_tail(raw)
    return magic == DIR_TAIL_MAGIC and stored == dir_block_checksum(raw)


def certify_dir_block(geom: Geometry, d: int, blk: int, raw: bytes,
                      mode_of, cksum_ok: bool | None = None) -> CertifyResult:
    """Verify one directory block against the (already repaired) inode table.

    ``mode_of(ino)`` must expose post-inode-pass modes; certification is only
    valid once that pass has completed and duplicate claims are resolved.
    """
    res = CertifyResult(d, blk)
    icount_inc: list[int] = []
    buf = bytearray(raw)
    changed = False

    if cksum_ok is None:
        cksum_ok = scan_dir_checksum(raw)

    entries: list[Dirent] = []
    malformed: Malformation | None = None
    for item in iterate_dirents(raw):
        if isinstance(item, Malformation):
            malformed = item
            break
        entries.append(item)

    rec_of = {e.offset: e.rec_len for e in entries}
    if malformed is not None:
        res.findings.append(Finding(2, Code.BadDirent, inode=d, block=blk,
                                    offset=malformed.offset,
                                    detail=f"{malformed.reason}; remaining entries dropped",
                                    repair=Repair.TruncatedEntries))
        rest = DIR_PAYLOAD - malformed.offset
        buf[malformed.offset:DIR_PAYLOAD] = b"\x00" * rest
        if rest >= 12 or not entries:
            struct.pack_into("<H", buf, malformed.offset + 8, rest)
        else:
            last = entries[-1]
            rec_of[last.offset] = last.rec_len + rest
            struct.pack_into("<H", buf, last.offset + 8, rec_of[last.offset])
        changed = True

    prev_off: int | None = None
    for e in entries:
        if not e.live:
            prev_off = e.offset
            continue
        if e.name == b".":
            if e.inode != d:
                res.findings.append(Finding(2, Code.BadDirent, inode=d, block=blk,
                                            offset=e.offset,
                                            detail=f"'.' names inode {e.inode}",
                                            repair=Repair.RewroteDotEntry))
                struct.pack_into("<Q", buf, e.offset, d)
                changed = True
            icount_inc.append(d)
            prev_off = e.offset
            continue
        if e.name == b"..":
            if res.dotdot is None:
                res.dotdot = (e.inode, blk, e.offset)
            prev_off = e.offset
            continue
        t = e.inode
        t_mode = mode_of(t) if 2 <= t < geom.total_inodes else 0
        if t_mode == 0:
            res.findings.append(Finding(2, Code.DanglingDirent, inode=d, block=blk,
                                        offset=e.offset,
                                        detail=f"target inode {t} not in use",
                                        repair=Repair.ClearedDirent))
            buf[e.offset:e.offset + e.rec_len] = b"\x00" * e.rec_len
            if prev_off is not None:
                rec_of[prev_off] += e.rec_len
                struct.pack_into("<H", buf, prev_off + 8, rec_of[prev_off])
            else:
                rec_of[e.offset] = e.rec_len
                struct.pack_into("<H", buf, e.offset + 8, e.rec_len)
                prev_off = e.offset
            changed = True
            continue
        expected_ft = FT_FOR_ITYPE[t_mode >> 12]
        if e.file_type != expected_ft:
            res.findings.append(Finding(2, Code.BadDirent, inode=d, block=blk,
                                        offset=e.offset,
                                        detail=f"file_type {e.file_type} != {expected_ft} for inode {t}",
                                        repair=Repair.RewroteFileType))
            buf[e.offset + 11] = expected_ft
            changed = True
        icount_inc.append(t)
        if expected_ft == FT_DIR:
            res.parent_claims.append((d, blk, e.offset, t))
        prev_off = e.offset

    if not cksum_ok:
        stored_magic, stored = read_dir_tail(raw)
        res.findings.append(Finding(2, Code.BadDirChecksum, inode=d, block=blk,
                                    detail=f"stored 0x{stored:08X} != computed 0x{dir_block_checksum(raw):08X}",
                                    repair=Repair.RecomputedChecksum))
    if changed or not cksum_ok:
        write_dir_tail(buf)
        res.edits.append(Edit(blk * BLOCK_SIZE, bytes(buf)))
    res.icount_inc = np.array(icount_inc, dtype=np.int64)
    return res


@dataclass
class DotDotItem:
    dir_ino: int
    block: int
    offset: int
    recorded: int
    expected: int


def verify_dotdot_repair(item: DotDotItem, raw: bytes) -> tuple[Finding, Edit]:
    """Repair a '..' entry that disagrees with the dirent that links the dir."""
    buf = bytearray(raw)
    struct.pack_into("<Q", buf, item.offset, item.expected)
    write_dir_tail(buf)
    finding = Finding(2, Code.DotDotMismatch, inode=item.dir_ino, block=item.block,
                      offset=item.offset,
                      detail=f"'..' names {item.recorded}, parent is {item.expected}",
                      repair=Repair.RewroteDotDot)
    return finding, Edit(item.block * BLOCK_SIZE, bytes(buf))


# -- bitmap comparison ---------------------------------------------------------


def compare_bitmap_chunk(disk: np.ndarray, computed: np.ndarray,
                         byte_start: int, byte_end: int, bit_limit: int) -> list[int]:
    """Ascending bit indices in [byte_start*8, byte_end*8) & [0, bit_limit) that differ."""
    diff = disk[byte_start:byte_end] ^ computed[byte_start:byte_end]
    if not diff.any():
        return []
    bits = np.unpackbits(diff, bitorder="little")
    idx = np.flatnonzero(bits) + byte_start * 8
    return idx[idx < bit_limit].tolist()
