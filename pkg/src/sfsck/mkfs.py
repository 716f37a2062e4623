"""Synthetic image population.

Directories are attached breadth-first starting at the root, each parent
taking children up to ``max_dir_fanout``; files then fill the remaining
fanout capacity in the same breadth-first order.  Inode 2 is the root and
inode 3 is an empty ``lost+found``.  Generation is a pure function of
(spec, seed): building the same spec twice yields byte-identical images.
"""

from __future__ import annotations

import json
import random
import struct
from collections import deque
from dataclasses import dataclass, field

from .errors import SpecInfeasibleError
from .image import Image
from .layout import (
    BLOCK_SIZE, DIR_PAYLOAD, FT_DIR, FT_REG, ITYPE_DIR, ITYPE_REG,
    LOST_FOUND_INO, ROOT_INO, NDIRECT, MAX_FILE_BLOCKS, Geometry, Inode,
    Superblock, build_dir_block, dirent_size, plan_geometry,
)

MTIME = 1_700_000_000  # fixed stamp keeps builds reproducible
DIR_PERM = 0o755
FILE_PERM = 0o644


@dataclass
class ImageSpec:
    total_blocks: int
    total_inodes: int
    file_count: int = 0
    dir_count: int = 0
    mean_file_blocks: int = 1
    max_dir_fanout: int = 1024
    seed: int = 0

    def validate(self) -> None:
        if self.total_blocks < 8:
            raise SpecInfeasibleError("total_blocks too small")
        # inodes 0 and 1 are reserved, 2 is the root, 3 is lost+found
        if self.file_count + self.dir_count + 4 > self.total_inodes:
            raise SpecInfeasibleError(
                f"{self.file_count} files + {self.dir_count} dirs need "
                f"{self.file_count + self.dir_count + 4} inodes, have {self.total_inodes}")
        if self.max_dir_fanout < 1:
            raise SpecInfeasibleError("max_dir_fanout must be >= 1")
        if self.mean_file_blocks < 0 or self.mean_file_blocks > MAX_FILE_BLOCKS // 2:
            raise SpecInfeasibleError("mean_file_blocks out of range")


@dataclass
class ManifestEntry:
    inode: int
    kind: str  # "dir" | "file"
    parent: int
    name: str
    size: int
    blocks: list[tuple[int, int]]  # extents as (start, length)


@dataclass
class Manifest:
    spec: ImageSpec
    entries: list[ManifestEntry] = field(default_factory=list)

    def counts(self) -> tuple[int, int]:
        """Created (file, dir) population, excluding root and lost+found."""
        files = sum(1 for e in self.entries if e.kind == "file")
        dirs = sum(1 for e in self.entries if e.kind == "dir" and e.inode > 3)
        return files, dirs

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(json.dumps({
                "record": "header",
                "total_blocks": self.spec.total_blocks,
                "total_inodes": self.spec.total_inodes,
                "file_count": self.spec.file_count,
                "dir_count": self.spec.dir_count,
                "mean_file_blocks": self.spec.mean_file_blocks,
                "max_dir_fanout": self.spec.max_dir_fanout,
                "seed": self.spec.seed,
            }) + "\n")
            for e in self.entries:
                f.write(json.dumps({
                    "record": "inode",
                    "inode": e.inode,
                    "kind": e.kind,
                    "parent": e.parent,
                    "name": e.name,
                    "size": e.size,
                    "blocks": [list(x) for x in e.blocks],
                }) + "\n")

    @classmethod
    def load(cls, path: str) -> "Manifest":
        with open(path) as f:
            header = json.loads(f.readline())
            spec = ImageSpec(
                total_blocks=header["total_blocks"],
                total_inodes=header["total_inodes"],
                file_count=header["file_count"],
                dir_count=header["dir_count"],
                mean_file_blocks=header["mean_file_blocks"],
                max_dir_fanout=header["max_dir_fanout"],
                seed=header["seed"],
            )
            m = cls(spec)
            for line in f:
                d = json.loads(line)
                m.entries.append(ManifestEntry(
                    inode=d["inode"], kind=d["kind"], parent=d["parent"],
                    name=d["name"], size=d["size"],
                    blocks=[tuple(x) for x in d["blocks"]]))
            return m


@dataclass
class _Node:
    ino: int
    kind: str
    parent: int
    name: str
    children: list[int] = field(default_factory=list)  # dir only
    nblocks: int = 0
    size: int = 0
    blocks: list[int] = field(default_factory=list)
    indirect: int = 0
    dir_blocks: list[bytes] = field(default_factory=list)


def _extents(blocks: list[int]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for b in sorted(blocks):
        if out and out[-1][0] + out[-1][1] == b:
            out[-1] = (out[-1][0], out[-1][1] + 1)
        else:
            out.append((b, 1))
    return out


def _build_tree(spec: ImageSpec) -> dict[int, _Node]:
    nodes: dict[int, _Node] = {
        ROOT_INO: _Node(ROOT_INO, "dir", ROOT_INO, "/"),
        LOST_FOUND_INO: _Node(LOST_FOUND_INO, "dir", ROOT_INO, "lost+found"),
    }
    nodes[ROOT_INO].children.append(LOST_FOUND_INO)
    fanout = spec.max_dir_fanout
    # lost+found stays empty and never takes children
    parents = deque([ROOT_INO])
    next_ino = 4

    def attach(kind: str, name: str) -> int:
        nonlocal next_ino
        while parents and len(nodes[parents[0]].children) >= fanout:
            parents.popleft()
        if not parents:
            raise SpecInfeasibleError("directory fanout capacity exhausted")
        p = parents[0]
        ino = next_ino
        next_ino += 1
        nodes[ino] = _Node(ino, kind, p, name)
        nodes[p].children.append(ino)
        return ino

    for i in range(spec.dir_count):
        ino = attach("dir", f"d{i}")
        parents.append(ino)
    for i in range(spec.file_count):
        attach("file", f"f{i}")
    return nodes


def _pack_dir_payload(entries: list[tuple[int, int, bytes]]) -> list[bytes]:
    """Split dirents into as many blocks as needed, preserving order."""
    blocks: list[bytes] = []
    cur: list[tuple[int, int, bytes]] = []
    used = 0
    for e in entries:
        need = dirent_size(len(e[2]))
        if used + need > DIR_PAYLOAD:
            blocks.append(build_dir_block(cur))
            cur, used = [], 0
        cur.append(e)
        used += need
    blocks.append(build_dir_block(cur))
    return blocks


def build_image(spec: ImageSpec, path: str | None = None) -> tuple[Image, Manifest]:
    """Build a pristine image; returns the open image and its manifest."""
    spec.validate()
    geom = plan_geometry(spec.total_blocks, spec.total_inodes)
    if geom.first_data_block >= spec.total_blocks:
        raise SpecInfeasibleError("metadata alone exceeds total_blocks")

    rng = random.Random(spec.seed)
    nodes = _build_tree(spec)

    # file sizes: mean block count with +/-50% uniform jitter
    for ino in sorted(nodes):
        node = nodes[ino]
        if node.kind != "file":
            continue
        mean = spec.mean_file_blocks
        if mean == 0:
            node.nblocks = 0
        else:
            lo = max(0, (mean + 1) // 2)
            hi = mean + mean // 2
            node.nblocks = rng.randint(lo, hi)
        if node.nblocks:
            node.size = (node.nblocks - 1) * BLOCK_SIZE + rng.randint(1, BLOCK_SIZE)

    # directory payloads (needed before block allocation to know block counts)
    for ino in sorted(nodes):
        node = nodes[ino]
        if node.kind != "dir":
            continue
        entries = [(ino, FT_DIR, b"."), (node.parent, FT_DIR, b"..")]
        for c in node.children:
            ftype = FT_DIR if nodes[c].kind == "dir" else FT_REG
            entries.append((c, ftype, nodes[c].name.encode()))
        node.dir_blocks = _pack_dir_payload(entries)

    # sequential allocation in inode order keeps builds deterministic
    next_block = geom.first_data_block

    def alloc(n: int) -> int:
        nonlocal next_block
        if next_block + n > spec.total_blocks:
            raise SpecInfeasibleError("data region capacity exhausted")
        start = next_block
        next_block += n
        return start

    for ino in sorted(nodes):
        node = nodes[ino]
        if node.kind == "dir":
            n = len(node.dir_blocks)
            node.nblocks = n
            node.size = n * BLOCK_SIZE
            start = alloc(n)
            node.blocks = list(range(start, start + n))
        else:
            if node.nblocks:
                start = alloc(node.nblocks)
                node.blocks = list(range(start, start + node.nblocks))
            if node.nblocks > NDIRECT:
                node.indirect = alloc(1)
        if node.nblocks > MAX_FILE_BLOCKS:
            raise SpecInfeasibleError(f"inode {ino} needs {node.nblocks} blocks")

    img = Image.create(path, spec.total_blocks) if path else Image.from_bytes(
        bytes(spec.total_blocks * BLOCK_SIZE))

    # inode table
    for ino in sorted(nodes):
        node = nodes[ino]
        inode = Inode(
            mode=(ITYPE_DIR << 12 | DIR_PERM) if node.kind == "dir" else (ITYPE_REG << 12 | FILE_PERM),
            links_count=(2 + sum(1 for c in node.children if nodes[c].kind == "dir"))
            if node.kind == "dir" else 1,
            size=node.size,
            mtime=MTIME,
        )
        for i, b in enumerate(node.blocks[:NDIRECT]):
            inode.direct[i] = b
        inode.indirect = node.indirect
        img.write_at(geom.inode_offset(ino), inode.pack())
        if node.indirect:
            tail = node.blocks[NDIRECT:]
            raw = struct.pack(f"<{len(tail)}Q", *tail)
            img.write_at(node.indirect * BLOCK_SIZE, raw)

    # directory content (file data blocks stay zero; nothing checks them)
    for ino in sorted(nodes):
        node = nodes[ino]
        for b, raw in zip(node.blocks, node.dir_blocks):
            img.write_block(b, raw)

    # bitmaps: blocks [0, next_block) and inodes {0, 1} + every populated inode
    used_inodes = 2 + len(nodes)
    bb = bytearray((spec.total_blocks + 7) // 8)
    _set_bit_range(bb, 0, next_block)
    img.write_at(geom.block_bitmap_offset(), bytes(bb))
    ib = bytearray((spec.total_inodes + 7) // 8)
    _set_bit_range(ib, 0, used_inodes)
    img.write_at(geom.inode_bitmap_offset(), bytes(ib))

    sb = Superblock(
        total_blocks=spec.total_blocks,
        total_inodes=spec.total_inodes,
        free_blocks=spec.total_blocks - next_block,
        free_inodes=spec.total_inodes - used_inodes,
        block_bitmap_start=geom.block_bitmap_start,
        block_bitmap_blocks=geom.block_bitmap_blocks,
        inode_bitmap_start=geom.inode_bitmap_start,
        inode_bitmap_blocks=geom.inode_bitmap_blocks,
        inode_table_start=geom.inode_table_start,
        inode_table_blocks=geom.inode_table_blocks,
        first_data_block=geom.first_data_block,
    )
    img.write_at(0, sb.pack())

    manifest = Manifest(spec)
    for ino in sorted(nodes):
        node = nodes[ino]
        blocks = list(node.blocks)
        if node.indirect:
            blocks.append(node.indirect)
        manifest.entries.append(ManifestEntry(
            inode=ino, kind=node.kind, parent=node.parent, name=node.name,
            size=node.size, blocks=_extents(blocks)))
    return img, manifest


def _set_bit_range(buf: bytearray, start: int, end: int) -> None:
    first_full = (start + 7) >> 3
    last_full = end >> 3
    for b in range(start, min(end, first_full << 3)):
        buf[b >> 3] |= 1 << (b & 7)
    if last_full > first_full:
        buf[first_full:last_full] = b"\xff" * (last_full - first_full)
    for b in range(max(start, last_full << 3), end):
        buf[b >> 3] |= 1 << (b & 7)


def suggest_geometry(file_count: int, dir_count: int, mean_file_blocks: int,
                     max_dir_fanout: int) -> tuple[int, int]:
    """Estimate (total_blocks, total_inodes) that comfortably fit a population."""
    total_inodes = file_count + dir_count + 4
    total_inodes = max(64, -(-total_inodes // 32) * 32)
    # dirent bytes: names up to ~10 chars round to 24-byte records, plus . and ..
    entry_bytes = (file_count + dir_count) * 24 + (dir_count + 2) * 32
    dir_blocks = dir_count + 2 + entry_bytes // (DIR_PAYLOAD - 64)
    file_blocks = file_count * (mean_file_blocks + (mean_file_blocks + 1) // 2)
    indirect = file_count if mean_file_blocks * 3 // 2 > NDIRECT else 0
    data = dir_blocks + file_blocks + indirect + 64
    total_blocks = 0
    for _ in range(4):
        geom = plan_geometry(max(64, total_blocks), total_inodes)
        total_blocks = geom.first_data_block + data
    return total_blocks, total_inodes
