"""In-memory reconstruction of what the bitmaps and counts should say.

Bitsets are numpy uint8 arrays, LSB-first like the on-disk bitmaps, so the
final comparison in the bitmap pass is a straight byte compare.  Blocks
claimed more than once are tracked in a second bitset; the claimants
themselves are recovered by a targeted rescan once the inode pass finishes
(duplicates are rare, the rescan is cheap, and it spares every context a
per-block owner map).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layout import Geometry, ROOT_INO

# -- bitset helpers ---------------------------------------------------------


def make_bitset(nbits: int) -> np.ndarray:
    return np.zeros((nbits + 7) // 8, dtype=np.uint8)


def bit_get(bits: np.ndarray, i: int) -> bool:
    return bool(bits[i >> 3] & (1 << (i & 7)))


def bit_set(bits: np.ndarray, i: int) -> None:
    bits[i >> 3] |= np.uint8(1 << (i & 7))


def bit_clear(bits: np.ndarray, i: int) -> None:
    bits[i >> 3] &= np.uint8(~(1 << (i & 7)) & 0xFF)


def set_bit_range(bits: np.ndarray, start: int, end: int) -> None:
    for b in range(start, min(end, ((start + 7) >> 3) << 3)):
        bit_set(bits, b)
    first_full, last_full = (start + 7) >> 3, end >> 3
    if last_full > first_full:
        bits[first_full:last_full] = 0xFF
    for b in range(max(start, last_full << 3), end):
        bit_set(bits, b)


def popcount(bits: np.ndarray) -> int:
    return int.from_bytes(bits.tobytes(), "little").bit_count()


def bits_set_indices(bits: np.ndarray, limit: int) -> list[int]:
    """Ascending indices of set bits below ``limit``."""
    if not bits.any():
        return []
    expanded = np.unpackbits(bits, bitorder="little")[:limit]
    return np.flatnonzero(expanded).tolist()


def set_bits_bulk(bits: np.ndarray, indices: np.ndarray) -> None:
    if len(indices) == 0:
        return
    idx = np.asarray(indices, dtype=np.int64)
    np.bitwise_or.at(bits, idx >> 3, (np.uint8(1) << (idx & 7).astype(np.uint8)))


def apply_claims(claimed: np.ndarray, multi: np.ndarray, blocks) -> None:
    """Claim a batch of blocks, recording repeats (in-batch or prior) as multi."""
    arr = np.asarray(blocks, dtype=np.int64)
    if arr.size == 0:
        return
    uniq, counts = np.unique(arr, return_counts=True)
    byte_idx = uniq >> 3
    masks = (np.uint8(1) << (uniq & 7).astype(np.uint8))
    already = uniq[(claimed[byte_idx] & masks) != 0]
    np.bitwise_or.at(claimed, byte_idx, masks)
    dup = np.union1d(already, uniq[counts > 1])
    if dup.size:
        didx = dup >> 3
        dmask = (np.uint8(1) << (dup & 7).astype(np.uint8))
        np.bitwise_or.at(multi, didx, dmask)


# -- shadow state -------------------------------------------------------------


@dataclass
class ShadowState:
    geom: Geometry
    claimed_blocks: np.ndarray = field(init=False)
    multi_blocks: np.ndarray = field(init=False)
    claimed_inodes: np.ndarray = field(init=False)
    icount: np.ndarray = field(init=False)
    db_list: list[tuple[int, int]] = field(default_factory=list)
    dirs: list[int] = field(default_factory=list)
    db_chunks: list[np.ndarray] = field(default_factory=list)
    dir_chunks: list[np.ndarray] = field(default_factory=list)
    dotdot: dict[int, tuple[int, int, int]] = field(default_factory=dict)
    parent_claims: list[tuple[int, int, int, int]] = field(default_factory=list)
    parent_map: dict[int, int] = field(default_factory=dict)
    scanned_dirs: set[int] = field(default_factory=set)
    multi_claimants: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.geom
        self.claimed_blocks = make_bitset(g.total_blocks)
        self.multi_blocks = make_bitset(g.total_blocks)
        self.claimed_inodes = make_bitset(g.total_inodes)
        self.icount = np.zeros(g.total_inodes, dtype=np.int64)
        # metadata blocks and the two reserved inodes are accounted up front;
        # no inode references them
        set_bit_range(self.claimed_blocks, 0, g.first_data_block)
        bit_set(self.claimed_inodes, 0)
        bit_set(self.claimed_inodes, 1)

    # -- claims ----------------------------------------------------------

    def claim_blocks(self, blocks) -> None:
        apply_claims(self.claimed_blocks, self.multi_blocks, blocks)

    def claim_inode(self, ino: int) -> None:
        bit_set(self.claimed_inodes, ino)

    def claim_inodes_bulk(self, inodes: np.ndarray) -> None:
        set_bits_bulk(self.claimed_inodes, inodes)

    def inode_claimed(self, ino: int) -> bool:
        return bit_get(self.claimed_inodes, ino)

    def release_block(self, blk: int) -> None:
        bit_clear(self.claimed_blocks, blk)

    def multi_claimed_blocks(self) -> list[int]:
        return bits_set_indices(self.multi_blocks, self.geom.total_blocks)

    def allocate_block(self) -> int | None:
        """Lowest free data-region block per the claimed bitset, now claimed."""
        start_byte = self.geom.first_data_block >> 3
        free = np.flatnonzero(self.claimed_blocks[start_byte:] != 0xFF)
        for byte_i in free:
            base = (start_byte + int(byte_i)) << 3
            val = int(self.claimed_blocks[start_byte + byte_i])
            for bit in range(8):
                blk = base + bit
                if blk >= self.geom.total_blocks:
                    return None
                if blk >= self.geom.first_data_block and not (val >> bit) & 1:
                    bit_set(self.claimed_blocks, blk)
                    return blk
        return None

    # -- parent resolution --------------------------------------------------

    def resolve_parents(self) -> None:
        """First dirent reference in canonical scan order wins."""
        self.parent_map = {ROOT_INO: ROOT_INO}
        for p, blk, off, child in sorted(self.parent_claims):
            if child not in self.parent_map:
                self.parent_map[child] = p

    # -- counts ----------------------------------------------------------

    def free_counts(self) -> tuple[int, int]:
        used_b = popcount(self.claimed_blocks)
        used_i = popcount(self.claimed_inodes)
        return self.geom.total_blocks - used_b, self.geom.total_inodes - used_i
