"""Optional process-backed execution of the check kernels.

Worker threads keep the pool/queue/barrier semantics; shipping the pure
kernels to a small process pool is what lets CPU-bound checking scale past
the interpreter lock.  Workers map the image file read-only (shared pages,
so repairs applied by the engine are immediately visible) and every kernel
stays the exact same pure function the inline path runs, which keeps results
identical between execution modes.
"""

from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context

from .image import Image
from .kernels import certify_dir_block, pass1_check_range
from .layout import INODE_SIZE

_image: Image | None = None
_geom = None


def _init_worker(path: str) -> None:
    global _image, _geom
    _image = Image.open(path, readonly=True)
    _geom = _image.geometry()


def _mode_of(ino: int) -> int:
    return struct.unpack_from("<H", _image.read_at(_geom.inode_offset(ino), 2))[0]


def _k_pass1(first: int, count: int):
    return pass1_check_range(_geom, first, count, _image.read_at, _image.read_block)


def _k_certify(batch):
    out = []
    for d, blk, cksum_ok in batch:
        raw = _image.read_block(blk)
        out.append(certify_dir_block(_geom, d, blk, raw, _mode_of, cksum_ok))
    return out


def _warmup(_: int) -> int:
    import time
    time.sleep(0.02)  # hold the slot so every pool process actually spawns
    return 0


class ProcessKernels:
    """Kernel executor backed by a forked process pool.

    Must be created before any worker thread starts (fork safety); the pool
    is warmed eagerly so no fork happens later while threads are running.
    """

    def __init__(self, image_path: str, workers: int):
        self.pool = ProcessPoolExecutor(
            max_workers=workers,
            mp_context=get_context("fork"),
            initializer=_init_worker,
            initargs=(image_path,),
        )
        list(self.pool.map(_warmup, range(workers)))

    def pass1(self, first: int, count: int):
        return self.pool.submit(_k_pass1, first, count).result()

    def certify_batch(self, batch):
        return self.pool.submit(_k_certify, batch).result()

    def close(self) -> None:
        self.pool.shutdown(wait=True, cancel_futures=True)


class InlineKernels:
    """Kernel executor that runs in the calling worker thread.

    Reads go through the worker's private block cache when one is attached.
    """

    def __init__(self, image: Image, geom):
        self.image = image
        self.geom = geom

    def _readers(self, ctx):
        from .cache import HINT_DIR_SCAN, HINT_INODE_SCAN
        if ctx is not None and ctx.cache is not None:
            cache = ctx.cache
            return (lambda off, n: cache.read_range(off, n, HINT_INODE_SCAN),
                    lambda b: cache.read_block(b, HINT_INODE_SCAN),
                    lambda b: cache.read_block(b, HINT_DIR_SCAN))
        return self.image.read_at, self.image.read_block, self.image.read_block

    def pass1(self, first: int, count: int, ctx=None):
        read_at, read_block, _ = self._readers(ctx)
        return pass1_check_range(self.geom, first, count, read_at, read_block)

    def certify_batch(self, batch, ctx=None):
        read_at, _, read_dir = self._readers(ctx)

        def mode_of(ino: int) -> int:
            return struct.unpack_from("<H", read_at(self.geom.inode_offset(ino), 2))[0]

        out = []
        for d, blk, cksum_ok in batch:
            out.append(certify_dir_block(self.geom, d, blk, read_dir(blk), mode_of, cksum_ok))
        return out
