"""Central check/repair logic shared by the serial oracle and the engine.

Everything here runs single-threaded: duplicate-claim resolution after the
inode pass, dot-dot item construction, connectivity, reference counts, and
the bitmap pass.  Worker-parallel pieces live in kernels.py; run_serial()
composes both into the oracle the parallel modes are compared against.
"""

from __future__ import annotations

import struct
import time
from collections import Counter, defaultdict

import numpy as np

from .errors import SfsError
from .findings import Code, Finding, Repair, Report
from .image import Image
from .kernels import (
    CertifyResult, DotDotItem, Edit, Pass1Result, SLOT_ENTRY0, SLOT_INDIRECT,
    certify_dir_block, compare_bitmap_chunk, pass1_check_range,
    slot_file_index, verify_dotdot_repair,
)
from .layout import (
    BLOCK_SIZE, DIR_PAYLOAD, DIRENT_MIN, FT_DIR, FT_FOR_ITYPE, INODE_SIZE,
    LOST_FOUND_INO, NDIRECT, ROOT_INO, SB_FREE_BLOCKS_OFF, SB_FREE_INODES_OFF,
    Geometry, Inode, Malformation, Superblock, dirent_size, iterate_dirents,
    pack_dirent, write_dir_tail,
)
from .shadow import ShadowState, bit_get, bits_set_indices

DEFAULT_GRANULARITY = 2048


def apply_edits(image: Image, edits: list[Edit]) -> None:
    for e in edits:
        image.write_at(e.offset, e.data)


def integrate_pass1(state: ShadowState, res: Pass1Result) -> None:
    state.claim_blocks(res.claims)
    state.claim_inodes_bulk(res.inuse)
    if len(res.dirs):
        state.dir_chunks.append(res.dirs)
    if len(res.db):
        state.db_chunks.append(res.db)
    state.stats["pass1_inodes"] = state.stats.get("pass1_inodes", 0) + res.count


def integrate_certify(state: ShadowState, res: CertifyResult) -> None:
    if len(res.icount_inc):
        np.add.at(state.icount, res.icount_inc, 1)
    state.parent_claims.extend(res.parent_claims)
    if res.dotdot is not None:
        cur = state.dotdot.get(res.dir_ino)
        cand = res.dotdot
        # first '..' in canonical (block, offset) order wins
        if cur is None or (cand[1], cand[2]) < (cur[1], cur[2]):
            state.dotdot[res.dir_ino] = cand
    state.scanned_dirs.add(res.dir_ino)
    state.stats["pass2_blocks"] = state.stats.get("pass2_blocks", 0) + 1


def finish_pass1(state: ShadowState) -> None:
    if state.dir_chunks:
        state.dirs = np.unique(np.concatenate(state.dir_chunks)).tolist()
        state.dir_chunks = []
    if state.db_chunks:
        rows = np.unique(np.concatenate(state.db_chunks), axis=0)
        state.db_list = [tuple(r) for r in rows.tolist()]
        state.db_chunks = []


# -- duplicate claim resolution ------------------------------------------------


def resolve_multiclaims(image: Image, geom: Geometry, state: ShadowState,
                        report: Report) -> list[int]:
    """Settle multiply-claimed blocks: the first claimant in (inode, slot)
    order keeps the block, every later claim is zeroed.

    Runs after the inode pass completes; rescans in-use inodes to recover the
    claimant lists (only corrupted images pay this cost).  Returns the block
    numbers the repairs wrote, so callers can invalidate caches.
    """
    multis = state.multi_claimed_blocks()
    if not multis:
        return []
    written: list[int] = []
    multiset = set(multis)
    claimants: dict[int, list[tuple[int, int]]] = defaultdict(list)
    ind_cache: dict[int, np.ndarray] = {}

    for ino in bits_set_indices(state.claimed_inodes, geom.total_inodes):
        if ino < 2:
            continue
        inode = Inode.unpack(image.read_at(geom.inode_offset(ino), INODE_SIZE))
        if not inode.in_use or inode.inline_symlink:
            continue
        for j in range(NDIRECT):
            if inode.direct[j] in multiset:
                claimants[inode.direct[j]].append((ino, j))
        if inode.indirect:
            if inode.indirect in multiset:
                claimants[inode.indirect].append((ino, SLOT_INDIRECT))
            entries = np.frombuffer(image.read_block(inode.indirect), dtype="<u8")
            ind_cache[ino] = entries
            for k in np.flatnonzero(entries).tolist():
                if int(entries[k]) in multiset:
                    claimants[int(entries[k])].append((ino, SLOT_ENTRY0 + k))
    state.multi_claimants = {b: sorted(v) for b, v in claimants.items()}

    zeros_by_inode: dict[int, list[tuple[int, int]]] = defaultdict(list)  # ino -> [(slot, block)]
    for b in sorted(multiset):
        cl = state.multi_claimants.get(b)
        if not cl or len(cl) < 2:
            # claim multiplicity can collapse when caused by since-cleared inodes
            continue
        uniq = sorted({ino for ino, _ in cl})
        keeper = cl[0]
        report.add(Finding(1, Code.MultiplyClaimedBlock, inode=keeper[0], block=b,
                           detail=f"claimed by inodes {','.join(map(str, uniq))}; kept by inode {keeper[0]}",
                           repair=Repair.ZeroedPointer))
        for ino, slot in cl[1:]:
            zeros_by_inode[ino].append((slot, b))

    occ: dict[int, int] = {b: len(v) for b, v in state.multi_claimants.items()}
    removed_pairs: Counter = Counter()
    total_pairs: Counter = Counter()
    for b, cl in state.multi_claimants.items():
        for ino, _slot in cl:
            total_pairs[(ino, b)] += 1

    def remove_claim(ino: int, b: int) -> None:
        occ.setdefault(b, 1)
        occ[b] -= 1
        if occ[b] == 0:
            state.release_block(b)
        removed_pairs[(ino, b)] += 1

    for ino in sorted(zeros_by_inode):
        inode = Inode.unpack(image.read_at(geom.inode_offset(ino), INODE_SIZE))
        ind_dead = False
        ind_raw: bytearray | None = None
        for slot, b in sorted(zeros_by_inode[ino]):
            if slot < NDIRECT:
                inode.direct[slot] = 0
            elif slot == SLOT_INDIRECT:
                ind_dead = True
                inode.indirect = 0
                # every entry claim of this inode disappears with the pointer
                for k in np.flatnonzero(ind_cache[ino]).tolist():
                    remove_claim(ino, int(ind_cache[ino][k]))
            else:
                if ind_dead:
                    continue  # claim already cascaded away
                if ind_raw is None:
                    ind_raw = bytearray(image.read_block(inode.indirect))
                struct.pack_into("<Q", ind_raw, (slot - SLOT_ENTRY0) * 8, 0)
            inode.size = min(inode.size, slot_file_index(slot) * BLOCK_SIZE)
            remove_claim(ino, b)
        if ind_raw is not None and not ind_dead:
            image.write_block(inode.indirect, bytes(ind_raw))
            written.append(inode.indirect)
        image.write_at(geom.inode_offset(ino), inode.pack())
        written.append(geom.inode_offset(ino) // BLOCK_SIZE)

    dirset = set(state.dirs)
    pruned = {(ino, b) for (ino, b), n in removed_pairs.items()
              if ino in dirset and n >= max(total_pairs[(ino, b)], 1)}
    if pruned:
        state.db_list = [e for e in state.db_list if e not in pruned]
    return sorted(set(written))


# -- dot-dot verification -------------------------------------------------------


def verify_dotdot(dir_ino: int, state: ShadowState) -> DotDotItem | None:
    """Build the repair item for one directory, or None when consistent.

    Also credits the final '..' target's reference count.  Directories with
    no recorded parent are left to the connectivity pass.
    """
    from .errors import MissingParentRecordError

    if dir_ino not in state.scanned_dirs:
        raise MissingParentRecordError(f"directory {dir_ino} not scanned yet")
    rec = state.dotdot.get(dir_ino)
    expected = state.parent_map.get(dir_ino)
    if rec is None or expected is None:
        return None
    state.icount[expected] += 1
    recorded, blk, off = rec
    if recorded == expected:
        return None
    return DotDotItem(dir_ino, blk, off, recorded, expected)


def build_dotdot_items(state: ShadowState) -> list[DotDotItem]:
    state.resolve_parents()
    items = []
    for d in state.dirs:
        item = verify_dotdot(d, state)
        if item is not None:
            items.append(item)
    return items


# -- directory growth (reconnection target) -------------------------------------


def insert_dirent(image: Image, geom: Geometry, state: ShadowState,
                  dir_ino: int, name: bytes, child: int, ftype: int) -> None:
    """Insert a dirent, splitting an unused slot or growing the directory."""
    need = dirent_size(len(name))
    inode = Inode.unpack(image.read_at(geom.inode_offset(dir_ino), INODE_SIZE))
    blocks = [b for b in inode.direct if b]
    if inode.indirect:
        entries = np.frombuffer(image.read_block(inode.indirect), dtype="<u8")
        blocks += [int(b) for b in entries[entries != 0]]

    for b in blocks:
        raw = bytearray(image.read_block(b))
        for e in iterate_dirents(raw):
            if isinstance(e, Malformation):
                break
            if e.live and e.name == name and e.inode == child:
                return  # already present
            if not e.live and e.rec_len >= need:
                rest = e.rec_len - need
                if rest >= DIRENT_MIN:
                    pack_dirent(raw, e.offset, child, need, ftype, name)
                    pack_dirent(raw, e.offset + need, 0, rest, 0, b"")
                else:
                    pack_dirent(raw, e.offset, child, e.rec_len, ftype, name)
                write_dir_tail(raw)
                image.write_block(b, bytes(raw))
                return

    # no room: grow the directory by one block
    nb = state.allocate_block()
    if nb is None:
        raise SfsError("no free block available to grow directory")
    raw = bytearray(BLOCK_SIZE)
    pack_dirent(raw, 0, child, need, ftype, name)
    pack_dirent(raw, need, 0, DIR_PAYLOAD - need, 0, b"")
    write_dir_tail(raw)
    image.write_block(nb, bytes(raw))

    placed = False
    for j in range(NDIRECT):
        if inode.direct[j] == 0:
            inode.direct[j] = nb
            placed = True
            break
    if not placed:
        if inode.indirect == 0:
            ib = state.allocate_block()
            if ib is None:
                raise SfsError("no free block available for indirect pointer")
            image.write_block(ib, b"\x00" * BLOCK_SIZE)
            inode.indirect = ib
        ind_raw = bytearray(image.read_block(inode.indirect))
        entries = np.frombuffer(bytes(ind_raw), dtype="<u8")
        free = np.flatnonzero(entries == 0)
        if free.size == 0:
            raise SfsError("directory is at maximum size")
        struct.pack_into("<Q", ind_raw, int(free[0]) * 8, nb)
        image.write_block(inode.indirect, bytes(ind_raw))
    inode.size += BLOCK_SIZE
    image.write_at(geom.inode_offset(dir_ino), inode.pack())
    if (dir_ino, nb) not in state.db_list:
        state.db_list.append((dir_ino, nb))


# -- pass 3: connectivity --------------------------------------------------------


def pass3_connectivity(image: Image, geom: Geometry, state: ShadowState,
                       report: Report) -> None:
    """Reconnect every directory that cannot walk its parent chain to the root.

    Reachability is decided on a snapshot of the parent map, so the members
    of a detached cycle are all reported and all reconnected.
    """
    reachable: dict[int, bool] = {ROOT_INO: True}

    def walk(d: int) -> bool:
        trail = []
        cur = d
        while cur not in reachable:
            trail.append(cur)
            nxt = state.parent_map.get(cur)
            if nxt is None or nxt in trail or nxt == cur:
                for t in trail:
                    reachable[t] = False
                return False
            cur = nxt
        ok = reachable[cur]
        for t in trail:
            reachable[t] = ok
        return ok

    unreachable = [d for d in state.dirs if not walk(d)]
    for d in unreachable:
        target = ROOT_INO if d == LOST_FOUND_INO else LOST_FOUND_INO
        report.add(Finding(3, Code.UnreachableDirectory, inode=d,
                           detail="not reachable from root via parent chain",
                           repair=Repair.Reconnected))
        insert_dirent(image, geom, state, target, b"#%d" % d, d, FT_DIR)
        state.icount[d] += 1
        rec = state.dotdot.get(d)
        if rec is not None:
            recorded, blk, off = rec
            raw = bytearray(image.read_block(blk))
            struct.pack_into("<Q", raw, off, target)
            write_dir_tail(raw)
            image.write_block(blk, bytes(raw))
            state.icount[target] += 1
        state.parent_map[d] = target
    state.stats["pass3_dirs"] = len(state.dirs)


# -- pass 4: reference counts ----------------------------------------------------


def pass4_refcounts(image: Image, geom: Geometry, state: ShadowState,
                    report: Report) -> None:
    inuse = [i for i in bits_set_indices(state.claimed_inodes, geom.total_inodes)
             if i >= 2]
    if not inuse:
        state.stats["pass4_inodes"] = 0
        return
    idx = np.array(inuse, dtype=np.int64)
    table_off = geom.inode_offset(0)
    view = np.frombuffer(image.view(), dtype=np.uint8,
                         count=geom.total_inodes * INODE_SIZE, offset=table_off)
    links = view.reshape(-1, INODE_SIZE)[:, 2:4].copy().view("<u2").reshape(-1)
    expected = state.icount[idx]
    stored = links[idx].astype(np.int64)
    zero_link = idx[expected == 0]
    mismatch = idx[(stored != expected)]
    suspects = sorted(set(zero_link.tolist()) | set(mismatch.tolist()))

    for ino in suspects:
        inode = Inode.unpack(image.read_at(geom.inode_offset(ino), INODE_SIZE))
        want = int(state.icount[ino])
        if want == 0 and ino not in (ROOT_INO, LOST_FOUND_INO):
            report.add(Finding(4, Code.ZeroLinkInUse, inode=ino,
                               detail="in use but nothing references it",
                               repair=Repair.Reconnected))
            insert_dirent(image, geom, state, LOST_FOUND_INO, b"#%d" % ino,
                          ino, FT_FOR_ITYPE[inode.itype])
            state.icount[ino] += 1
            want = int(state.icount[ino])
        if inode.links_count != want:
            report.add(Finding(4, Code.WrongLinksCount, inode=ino,
                               detail=f"links_count {inode.links_count} != {want}",
                               repair=Repair.RewroteLinksCount))
            inode.links_count = want
            image.write_at(geom.inode_offset(ino), inode.pack())
    state.stats["pass4_inodes"] = len(inuse)


# -- pass 5: bitmaps -------------------------------------------------------------


def pass5_read_disk_bitmaps(image: Image, geom: Geometry) -> tuple[np.ndarray, np.ndarray]:
    bb = np.frombuffer(image.read_at(geom.block_bitmap_offset(),
                                     (geom.total_blocks + 7) // 8), dtype=np.uint8)
    ib = np.frombuffer(image.read_at(geom.inode_bitmap_offset(),
                                     (geom.total_inodes + 7) // 8), dtype=np.uint8)
    return bb, ib


def pass5_apply(image: Image, geom: Geometry, state: ShadowState, report: Report,
                block_mismatches: list[int], inode_mismatches: list[int]) -> None:
    disk_bb, disk_ib = pass5_read_disk_bitmaps(image, geom)
    for b in block_mismatches:
        report.add(Finding(5, Code.BlockBitmapMismatch, block=b,
                           detail=f"disk {int(bit_get(disk_bb, b))} != computed {int(bit_get(state.claimed_blocks, b))}",
                           repair=Repair.RewroteBitmap))
    for i in inode_mismatches:
        report.add(Finding(5, Code.InodeBitmapMismatch, inode=i,
                           detail=f"disk {int(bit_get(disk_ib, i))} != computed {int(bit_get(state.claimed_inodes, i))}",
                           repair=Repair.RewroteBitmap))
    if block_mismatches:
        image.write_at(geom.block_bitmap_offset(), state.claimed_blocks.tobytes())
    if inode_mismatches:
        image.write_at(geom.inode_bitmap_offset(), state.claimed_inodes.tobytes())

    free_b, free_i = state.free_counts()
    sb_raw = image.read_at(0, 100)
    sb = Superblock.unpack(sb_raw)
    dirty = False
    if sb.free_blocks != free_b:
        report.add(Finding(5, Code.FreeCountMismatch, offset=SB_FREE_BLOCKS_OFF,
                           detail=f"free_blocks {sb.free_blocks} != {free_b}",
                           repair=Repair.RewroteFreeCount))
        sb.free_blocks = free_b
        dirty = True
    if sb.free_inodes != free_i:
        report.add(Finding(5, Code.FreeCountMismatch, offset=SB_FREE_INODES_OFF,
                           detail=f"free_inodes {sb.free_inodes} != {free_i}",
                           repair=Repair.RewroteFreeCount))
        sb.free_inodes = free_i
        dirty = True
    if dirty:
        image.write_at(0, sb.pack())
    state.stats["pass5_bits"] = geom.total_blocks + geom.total_inodes


def pass5_compare_all(image: Image, geom: Geometry, state: ShadowState) -> tuple[list[int], list[int]]:
    disk_bb, disk_ib = pass5_read_disk_bitmaps(image, geom)
    blocks = compare_bitmap_chunk(disk_bb, state.claimed_blocks, 0, len(disk_bb),
                                  geom.total_blocks)
    inodes = compare_bitmap_chunk(disk_ib, state.claimed_inodes, 0, len(disk_ib),
                                  geom.total_inodes)
    return blocks, inodes


# -- serial oracle ---------------------------------------------------------------


def run_serial(image: Image, granularity: int = DEFAULT_GRANULARITY,
               cache=None) -> Report:
    """Single-threaded five-pass check and repair; the correctness oracle."""
    geom = image.geometry()
    state = ShadowState(geom)
    report = Report()

    if cache is not None:
        read_block = lambda b: cache.read_block(b)
    else:
        read_block = image.read_block
    read_at = image.read_at

    t0 = time.perf_counter()
    first = 2
    while first < geom.total_inodes:
        count = min(granularity, geom.total_inodes - first)
        res = pass1_check_range(geom, first, count, read_at, read_block)
        for e in res.edits:
            image.write_at(e.offset, e.data)
            if cache is not None:
                cache.invalidate(e.block)
        report.findings.extend(res.findings)
        integrate_pass1(state, res)
        first += count
    finish_pass1(state)
    written = resolve_multiclaims(image, geom, state, report)
    if cache is not None:
        for b in written:
            cache.invalidate(b)
    t1 = time.perf_counter()

    def mode_of(ino: int) -> int:
        return struct.unpack_from("<H", read_at(geom.inode_offset(ino), 2))[0]

    for d, blk in state.db_list:
        res = certify_dir_block(geom, d, blk, read_block(blk), mode_of)
        for e in res.edits:
            image.write_at(e.offset, e.data)
            if cache is not None:
                cache.invalidate(e.block)
        report.findings.extend(res.findings)
        integrate_certify(state, res)
    state.scanned_dirs.update(state.dirs)

    for item in build_dotdot_items(state):
        finding, edit = verify_dotdot_repair(item, read_block(item.block))
        image.write_at(edit.offset, edit.data)
        if cache is not None:
            cache.invalidate(edit.block)
        report.add(finding)
    t2 = time.perf_counter()

    pass3_connectivity(image, geom, state, report)
    t3 = time.perf_counter()
    pass4_refcounts(image, geom, state, report)
    t4 = time.perf_counter()
    blocks, inodes = pass5_compare_all(image, geom, state)
    pass5_apply(image, geom, state, report, blocks, inodes)
    t5 = time.perf_counter()

    report.stats.update(state.stats)
    report.stats["pass2_blocks"] = state.stats.get("pass2_blocks", 0)
    if cache is not None:
        report.stats["cache"] = cache.stats()
    report.wall_times.update({
        "pass1": t1 - t0, "pass2": t2 - t1, "pass3": t3 - t2,
        "pass4": t4 - t3, "pass5": t5 - t4, "total": t5 - t0,
    })
    image.flush()
    return report
