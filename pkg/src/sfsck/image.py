"""Block-addressed access to an image file or in-memory buffer.

Reads may happen concurrently from several threads; writes are exclusive by
contract (they only occur single-threaded or inside a repair barrier).
"""

from __future__ import annotations

import mmap
import os

from .errors import OutOfRangeError, UnrecognizedImageError
from .layout import BLOCK_SIZE, Geometry, Superblock, SB_SIZE


class Image:
    """A raw concatenation of 4096-byte blocks, block 0 first."""

    def __init__(self, buf, path: str | None = None, fileobj=None, readonly: bool = False):
        self._buf = buf
        self._file = fileobj
        self.path = path
        self.readonly = readonly
        self.size = len(buf)
        self.total_blocks = self.size // BLOCK_SIZE

    # -- construction -----------------------------------------------------

    @classmethod
    def create(cls, path: str, total_blocks: int) -> "Image":
        """Create a sparse image file of the given size, zero-filled."""
        f = open(path, "w+b")
        f.truncate(total_blocks * BLOCK_SIZE)
        buf = mmap.mmap(f.fileno(), total_blocks * BLOCK_SIZE)
        return cls(buf, path=path, fileobj=f)

    @classmethod
    def open(cls, path: str, readonly: bool = False) -> "Image":
        size = os.path.getsize(path)
        if size == 0:
            raise UnrecognizedImageError(f"{path}: empty file")
        mode = "rb" if readonly else "r+b"
        f = open(path, mode)
        access = mmap.ACCESS_READ if readonly else mmap.ACCESS_WRITE
        buf = mmap.mmap(f.fileno(), size, access=access)
        return cls(buf, path=path, fileobj=f, readonly=readonly)

    @classmethod
    def from_bytes(cls, data: bytes | bytearray) -> "Image":
        return cls(bytearray(data))

    # -- block and byte access --------------------------------------------

    def _check_block(self, block: int) -> None:
        if not 0 <= block < self.total_blocks:
            raise OutOfRangeError(f"block {block} outside [0, {self.total_blocks})")

    def read_block(self, block: int) -> bytes:
        self._check_block(block)
        off = block * BLOCK_SIZE
        return bytes(self._buf[off:off + BLOCK_SIZE])

    def write_block(self, block: int, data: bytes) -> None:
        self._check_block(block)
        if len(data) != BLOCK_SIZE:
            raise ValueError(f"block write must be {BLOCK_SIZE} bytes")
        off = block * BLOCK_SIZE
        self._buf[off:off + BLOCK_SIZE] = data

    def read_at(self, offset: int, length: int) -> bytes:
        if not 0 <= offset <= self.size - length:
            raise OutOfRangeError(f"read [{offset}, {offset + length}) outside image")
        return bytes(self._buf[offset:offset + length])

    def write_at(self, offset: int, data: bytes) -> None:
        if not 0 <= offset <= self.size - len(data):
            raise OutOfRangeError(f"write at {offset} outside image")
        self._buf[offset:offset + len(data)] = data

    def view(self) -> memoryview:
        """Zero-copy view of the whole image (read paths only)."""
        return memoryview(self._buf)

    # -- superblock --------------------------------------------------------

    def superblock(self) -> Superblock:
        """Decode and validate block 0; raises UnrecognizedImageError."""
        if self.size < BLOCK_SIZE:
            raise UnrecognizedImageError("image shorter than one block")
        raw = self.read_at(0, SB_SIZE)
        sb = Superblock.unpack(raw)
        sb.validate(raw, image_blocks=self.size // BLOCK_SIZE)
        return sb

    def geometry(self) -> Geometry:
        return Geometry.from_superblock(self.superblock())

    # -- lifecycle ----------------------------------------------------------

    def flush(self) -> None:
        if isinstance(self._buf, mmap.mmap):
            self._buf.flush()

    def close(self) -> None:
        if isinstance(self._buf, mmap.mmap):
            self._buf.close()
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self) -> "Image":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
