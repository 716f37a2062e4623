"""On-disk layout of an SFS image.

An image is a raw concatenation of 4096-byte blocks.  Block 0 holds the
superblock, followed by the block bitmap, the inode bitmap, the inode table,
and finally the data region.  All integers are little-endian; every metadata
structure carries a CRC32C computed with its own checksum field zeroed.

Bitmaps are LSB-first: bit ``b`` lives in byte ``b // 8`` under mask
``1 << (b % 8)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .crc import crc32c
from .errors import UnrecognizedImageError

BLOCK_SIZE = 4096
INODE_SIZE = 128
INODES_PER_BLOCK = BLOCK_SIZE // INODE_SIZE

MAGIC = 0x53465331
VERSION = 1

ROOT_INO = 2
LOST_FOUND_INO = 3
FIRST_VALID_INO = 2  # 0 invalid, 1 reserved

NDIRECT = 10
IND_ENTRIES = BLOCK_SIZE // 8  # single-indirect block holds 512 block numbers
MAX_FILE_BLOCKS = NDIRECT + IND_ENTRIES

# mode: file type in the high nibble, permissions in the low 12 bits
ITYPE_DIR = 0x4
ITYPE_REG = 0x8
ITYPE_SYMLINK = 0xA
VALID_ITYPES = (ITYPE_DIR, ITYPE_REG, ITYPE_SYMLINK)

# dirent file_type byte
FT_REG = 1
FT_DIR = 2
FT_SYMLINK = 7
FT_FOR_ITYPE = {ITYPE_REG: FT_REG, ITYPE_DIR: FT_DIR, ITYPE_SYMLINK: FT_SYMLINK}

SYMLINK_INLINE_MAX = 80  # longer targets live in one data block

DIRENT_HEADER = struct.Struct("<QHBB")  # inode, rec_len, name_len, file_type
DIRENT_MIN = 12
DIR_PAYLOAD = BLOCK_SIZE - 8  # dirents tile [0, 4088)
DIR_TAIL_MAGIC = 0x44424C4B
DIR_TAIL = struct.Struct("<II")  # tail_magic, checksum over bytes [0, 4088)

SB_STRUCT = struct.Struct("<IIIQQQQQIQIQIQQI")
SB_SIZE = SB_STRUCT.size  # 100 bytes at the start of block 0
SB_CHECKSUM_OFF = SB_SIZE - 4
SB_FREE_BLOCKS_OFF = 28
SB_FREE_INODES_OFF = 36

INODE_STRUCT = struct.Struct("<HHIQQ10QQIIQ")
assert INODE_STRUCT.size == INODE_SIZE

# byte offsets of inode fields, used by corruption injection and repairs
INO_MODE_OFF = 0
INO_LINKS_OFF = 2
INO_SIZE_OFF = 8
INO_DIRECT_OFF = 24
INO_INDIRECT_OFF = 104
INO_CHECKSUM_OFF = 112


def align4(n: int) -> int:
    return (n + 3) & ~3


def dirent_size(name_len: int) -> int:
    return align4(DIRENT_MIN + name_len)


@dataclass
class Superblock:
    magic: int = MAGIC
    version: int = VERSION
    block_size: int = BLOCK_SIZE
    total_blocks: int = 0
    total_inodes: int = 0
    free_blocks: int = 0
    free_inodes: int = 0
    block_bitmap_start: int = 0
    block_bitmap_blocks: int = 0
    inode_bitmap_start: int = 0
    inode_bitmap_blocks: int = 0
    inode_table_start: int = 0
    inode_table_blocks: int = 0
    root_inode: int = ROOT_INO
    first_data_block: int = 0
    checksum: int = 0

    def pack(self) -> bytes:
        """Serialize with a freshly computed checksum."""
        raw = bytearray(self._pack_raw(0))
        self.checksum = crc32c(raw)
        raw[SB_CHECKSUM_OFF:SB_SIZE] = struct.pack("<I", self.checksum)
        return bytes(raw)

    def _pack_raw(self, checksum: int) -> bytes:
        return SB_STRUCT.pack(
            self.magic, self.version, self.block_size,
            self.total_blocks, self.total_inodes,
            self.free_blocks, self.free_inodes,
            self.block_bitmap_start, self.block_bitmap_blocks,
            self.inode_bitmap_start, self.inode_bitmap_blocks,
            self.inode_table_start, self.inode_table_blocks,
            self.root_inode, self.first_data_block, checksum,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "Superblock":
        values = SB_STRUCT.unpack_from(raw, 0)
        sb = cls(*values)
        return sb

    def checksum_ok(self, raw: bytes) -> bool:
        return crc32c(raw[:SB_CHECKSUM_OFF] + b"\x00\x00\x00\x00") == self.checksum

    def validate(self, raw: bytes, image_blocks: int | None = None) -> None:
        """Raise UnrecognizedImageError unless the superblock is trustworthy."""
        if self.magic != MAGIC:
            raise UnrecognizedImageError(f"bad magic 0x{self.magic:08X}")
        if self.block_size != BLOCK_SIZE:
            raise UnrecognizedImageError(f"unsupported block size {self.block_size}")
        if not self.checksum_ok(raw):
            raise UnrecognizedImageError("superblock checksum mismatch")
        if self.root_inode != ROOT_INO:
            raise UnrecognizedImageError(f"root inode {self.root_inode} != {ROOT_INO}")
        if self.total_inodes < 3:
            raise UnrecognizedImageError("total_inodes < 3")
        regions = [
            (0, 1),
            (self.block_bitmap_start, self.block_bitmap_blocks),
            (self.inode_bitmap_start, self.inode_bitmap_blocks),
            (self.inode_table_start, self.inode_table_blocks),
        ]
        prev_end = 0
        for start, count in regions:
            if start < prev_end or count == 0:
                raise UnrecognizedImageError("metadata regions overlap or are empty")
            prev_end = start + count
        if self.first_data_block != prev_end or self.first_data_block >= self.total_blocks:
            raise UnrecognizedImageError("data region out of place")
        if image_blocks is not None and image_blocks != self.total_blocks:
            raise UnrecognizedImageError(
                f"file holds {image_blocks} blocks, superblock says {self.total_blocks}")


@dataclass
class Inode:
    mode: int = 0
    links_count: int = 0
    flags: int = 0
    size: int = 0
    mtime: int = 0
    direct: list[int] = field(default_factory=lambda: [0] * NDIRECT)
    indirect: int = 0
    checksum: int = 0

    @property
    def itype(self) -> int:
        return self.mode >> 12

    @property
    def in_use(self) -> bool:
        return self.mode != 0

    @property
    def is_dir(self) -> bool:
        return self.itype == ITYPE_DIR

    @property
    def is_symlink(self) -> bool:
        return self.itype == ITYPE_SYMLINK

    @property
    def inline_symlink(self) -> bool:
        return self.is_symlink and self.size <= SYMLINK_INLINE_MAX

    def pack(self) -> bytes:
        """Serialize with a freshly computed checksum."""
        raw = bytearray(INODE_STRUCT.pack(
            self.mode, self.links_count, self.flags, self.size, self.mtime,
            *self.direct, self.indirect, 0, 0, 0))
        self.checksum = crc32c(raw)
        raw[INO_CHECKSUM_OFF:INO_CHECKSUM_OFF + 4] = struct.pack("<I", self.checksum)
        return bytes(raw)

    @classmethod
    def unpack(cls, raw: bytes) -> "Inode":
        v = INODE_STRUCT.unpack_from(raw, 0)
        return cls(mode=v[0], links_count=v[1], flags=v[2], size=v[3], mtime=v[4],
                   direct=list(v[5:15]), indirect=v[15], checksum=v[16])

    def checksum_ok(self, raw: bytes) -> bool:
        return inode_checksum(raw) == self.checksum

    def pointer_slots(self) -> list[tuple[int, int]]:
        """(slot, block#) pairs for nonzero pointers, direct then indirect."""
        out = [(i, b) for i, b in enumerate(self.direct) if b]
        if self.indirect:
            out.append((NDIRECT, self.indirect))
        return out


def inode_checksum(raw: bytes) -> int:
    """Checksum of a 128-byte inode record with its checksum field zeroed."""
    return crc32c(raw[:INO_CHECKSUM_OFF] + b"\x00\x00\x00\x00" + raw[INO_CHECKSUM_OFF + 4:])


def dir_block_checksum(raw: bytes) -> int:
    return crc32c(raw[:DIR_PAYLOAD])


def read_dir_tail(raw: bytes) -> tuple[int, int]:
    return DIR_TAIL.unpack_from(raw, DIR_PAYLOAD)


def write_dir_tail(raw: bytearray) -> None:
    """Recompute and store the tail over the current payload."""
    DIR_TAIL.pack_into(raw, DIR_PAYLOAD, DIR_TAIL_MAGIC, dir_block_checksum(raw))


@dataclass
class Dirent:
    offset: int
    inode: int
    rec_len: int
    name_len: int
    file_type: int
    name: bytes

    @property
    def live(self) -> bool:
        return self.inode != 0


@dataclass
class Malformation:
    """Structural tiling violation; iteration stops at ``offset``."""
    offset: int
    reason: str


def iterate_dirents(raw: bytes):
    """Yield Dirent records while the tiling invariant holds.

    On the first violation a single Malformation is yielded and iteration
    stops.  Malformed blocks are expected input, not an error.
    """
    off = 0
    while off < DIR_PAYLOAD:
        if off + DIRENT_MIN > DIR_PAYLOAD:
            yield Malformation(off, "header crosses payload boundary")
            return
        ino, rec_len, name_len, ftype = DIRENT_HEADER.unpack_from(raw, off)
        if rec_len < dirent_size(name_len) or rec_len % 4 != 0:
            yield Malformation(off, f"rec_len {rec_len} invalid for name_len {name_len}")
            return
        if off + rec_len > DIR_PAYLOAD:
            yield Malformation(off, f"rec_len {rec_len} overruns payload")
            return
        name = bytes(raw[off + DIRENT_MIN:off + DIRENT_MIN + name_len])
        yield Dirent(off, ino, rec_len, name_len, ftype, name)
        off += rec_len


def pack_dirent(buf: bytearray, off: int, inode: int, rec_len: int,
                file_type: int, name: bytes) -> None:
    """Write one dirent record; pad bytes inside rec_len are zeroed."""
    buf[off:off + rec_len] = b"\x00" * rec_len
    DIRENT_HEADER.pack_into(buf, off, inode, rec_len, len(name), file_type)
    buf[off + DIRENT_MIN:off + DIRENT_MIN + len(name)] = name


def build_dir_block(entries: list[tuple[int, int, bytes]]) -> bytes:
    """Build one directory block from (inode, file_type, name) tuples.

    Entries are laid out compactly in order; the remainder becomes one unused
    slot so that rec_lens tile [0, 4088) exactly.
    """
    buf = bytearray(BLOCK_SIZE)
    off = 0
    for ino, ftype, name in entries:
        need = dirent_size(len(name))
        if off + need > DIR_PAYLOAD:
            raise ValueError("entries do not fit in one block")
        pack_dirent(buf, off, ino, need, ftype, name)
        off += need
    rest = DIR_PAYLOAD - off
    if rest:
        if rest < DIRENT_MIN:
            # grow the final entry instead of emitting an undersized filler
            if not entries:
                raise ValueError("cannot tile an empty block with rest < 12")
            last_off = off - dirent_size(len(entries[-1][2]))
            rec = dirent_size(len(entries[-1][2])) + rest
            struct.pack_into("<H", buf, last_off + 8, rec)
        else:
            pack_dirent(buf, off, 0, rest, 0, b"")
    write_dir_tail(buf)
    return bytes(buf)


@dataclass(frozen=True)
class Geometry:
    """Derived byte offsets for a validated superblock."""
    total_blocks: int
    total_inodes: int
    block_bitmap_start: int
    block_bitmap_blocks: int
    inode_bitmap_start: int
    inode_bitmap_blocks: int
    inode_table_start: int
    inode_table_blocks: int
    first_data_block: int

    @classmethod
    def from_superblock(cls, sb: Superblock) -> "Geometry":
        return cls(
            total_blocks=sb.total_blocks,
            total_inodes=sb.total_inodes,
            block_bitmap_start=sb.block_bitmap_start,
            block_bitmap_blocks=sb.block_bitmap_blocks,
            inode_bitmap_start=sb.inode_bitmap_start,
            inode_bitmap_blocks=sb.inode_bitmap_blocks,
            inode_table_start=sb.inode_table_start,
            inode_table_blocks=sb.inode_table_blocks,
            first_data_block=sb.first_data_block,
        )

    def inode_offset(self, ino: int) -> int:
        return self.inode_table_start * BLOCK_SIZE + ino * INODE_SIZE

    def block_bitmap_offset(self) -> int:
        return self.block_bitmap_start * BLOCK_SIZE

    def inode_bitmap_offset(self) -> int:
        return self.inode_bitmap_start * BLOCK_SIZE

    def block_in_data_region(self, blk: int) -> bool:
        return self.first_data_block <= blk < self.total_blocks


def plan_geometry(total_blocks: int, total_inodes: int) -> Geometry:
    """Compute the standard region layout for a new image."""
    bb = (total_blocks + BLOCK_SIZE * 8 - 1) // (BLOCK_SIZE * 8)
    ib = (total_inodes + BLOCK_SIZE * 8 - 1) // (BLOCK_SIZE * 8)
    it = (total_inodes + INODES_PER_BLOCK - 1) // INODES_PER_BLOCK
    first_data = 1 + bb + ib + it
    return Geometry(
        total_blocks=total_blocks, total_inodes=total_inodes,
        block_bitmap_start=1, block_bitmap_blocks=bb,
        inode_bitmap_start=1 + bb, inode_bitmap_blocks=ib,
        inode_table_start=1 + bb + ib, inode_table_blocks=it,
        first_data_block=first_data,
    )
