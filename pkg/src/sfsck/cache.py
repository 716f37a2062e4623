"""Per-thread block cache with scan-kind readahead.

Each cache instance is confined to one worker, so parallel scans never evict
each other's entries.  A miss pulls the missed block plus the next
(readahead - 1) blocks of the stream into the private cache; the readahead
depth depends on whether the caller is walking the inode table or directory
blocks.  Repair writes invalidate the written block in every registered
cache while workers are quiesced at the barrier.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

from .layout import BLOCK_SIZE

HINT_INODE_SCAN = "inode"
HINT_DIR_SCAN = "dir"


@dataclass
class CacheConfig:
    capacity_blocks: int = 4096
    readahead_inode_scan: int = 16
    readahead_dir_scan: int = 8

    def validate(self) -> None:
        ra = max(self.readahead_inode_scan, self.readahead_dir_scan)
        if not (self.capacity_blocks >= ra >= 1
                and min(self.readahead_inode_scan, self.readahead_dir_scan) >= 1):
            raise ValueError("need capacity >= readahead >= 1")


class BlockCache:
    """LRU cache over an image, private to one thread."""

    def __init__(self, image, config: CacheConfig | None = None):
        self.image = image
        self.config = config or CacheConfig()
        self.config.validate()
        self._lru: OrderedDict[int, bytes] = OrderedDict()
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def read_block(self, block: int, hint: str = HINT_INODE_SCAN) -> bytes:
        entry = self._lru.get(block)
        if entry is not None:
            self.hits += 1
            self._lru.move_to_end(block)
            return entry
        self.misses += 1
        depth = (self.config.readahead_inode_scan if hint == HINT_INODE_SCAN
                 else self.config.readahead_dir_scan)
        end = min(block + depth, self.image.total_blocks)
        data = self.image.read_at(block * BLOCK_SIZE, (end - block) * BLOCK_SIZE)
        for i, b in enumerate(range(block, end)):
            self._lru[b] = data[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE]
            self._lru.move_to_end(b)
        while len(self._lru) > self.config.capacity_blocks:
            self._lru.popitem(last=False)
            self.evictions += 1
        return self._lru[block]

    def read_range(self, offset: int, length: int, hint: str = HINT_INODE_SCAN) -> bytes:
        """Byte range assembled through the block cache."""
        first = offset // BLOCK_SIZE
        last = (offset + length - 1) // BLOCK_SIZE
        if first == last:
            blk = self.read_block(first, hint)
            start = offset - first * BLOCK_SIZE
            return blk[start:start + length]
        parts = [self.read_block(b, hint) for b in range(first, last + 1)]
        raw = b"".join(parts)
        start = offset - first * BLOCK_SIZE
        return raw[start:start + length]

    def invalidate(self, block: int) -> None:
        self._lru.pop(block, None)

    def clear(self) -> None:
        self._lru.clear()

    def stats(self) -> dict:
        return {"hits": self.hits, "misses": self.misses, "evictions": self.evictions}
