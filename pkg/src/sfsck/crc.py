"""CRC32C (Castagnoli) used by every checksum in the image format.

Parameters: reflected polynomial 0x82F63B78, init 0xFFFFFFFF, final XOR
0xFFFFFFFF.  Check value: crc32c(b"123456789") == 0xE3069283.

The hot path is a numba-compiled byte loop (releases the GIL); a pure-Python
table implementation is kept as a fallback for environments without numba.
"""

from __future__ import annotations

import numpy as np

_POLY = 0x82F63B78


def _build_table() -> list[int]:
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ _POLY if c & 1 else c >> 1
        table.append(c)
    return table


_TABLE = tuple(_build_table())
_TABLE_NP = np.array(_TABLE, dtype=np.uint32)


def _crc32c_py(data: bytes | bytearray | memoryview) -> int:
    c = 0xFFFFFFFF
    table = _TABLE
    for b in bytes(data):
        c = (c >> 8) ^ table[(c ^ b) & 0xFF]
    return c ^ 0xFFFFFFFF


try:
    import numba

    _u8_ro = numba.types.Array(numba.uint8, 1, "C", readonly=True)
    _u8_2d_ro = numba.types.Array(numba.uint8, 2, "C", readonly=True)

    @numba.njit(numba.uint32(_u8_ro), cache=True, nogil=True)
    def _crc32c_nb(buf):  # pragma: no cover - exercised via crc32c()
        c = numba.uint32(0xFFFFFFFF)
        for i in range(buf.shape[0]):
            c = (c >> numba.uint32(8)) ^ _TABLE_NP[(c ^ numba.uint32(buf[i])) & numba.uint32(0xFF)]
        return c ^ numba.uint32(0xFFFFFFFF)

    @numba.njit(numba.uint32[:](_u8_2d_ro), cache=True, nogil=True)
    def _crc32c_rows_nb(rows):  # pragma: no cover
        n = rows.shape[0]
        out = np.empty(n, dtype=np.uint32)
        for r in range(n):
            c = numba.uint32(0xFFFFFFFF)
            for i in range(rows.shape[1]):
                c = (c >> numba.uint32(8)) ^ _TABLE_NP[(c ^ numba.uint32(rows[r, i])) & numba.uint32(0xFF)]
            out[r] = c ^ numba.uint32(0xFFFFFFFF)
        return out

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba missing or unusable
    HAVE_NUMBA = False


def crc32c(data: bytes | bytearray | memoryview) -> int:
    """CRC32C of a byte sequence."""
    if HAVE_NUMBA:
        arr = np.frombuffer(bytes(data), dtype=np.uint8)
        return int(_crc32c_nb(arr))
    return _crc32c_py(data)


def crc32c_rows(rows: np.ndarray) -> np.ndarray:
    """CRC32C of each row of a C-contiguous uint8 2-D array."""
    if rows.dtype != np.uint8 or rows.ndim != 2:
        raise ValueError("expected a 2-D uint8 array")
    rows = np.ascontiguousarray(rows)
    if HAVE_NUMBA:
        return _crc32c_rows_nb(rows)
    return np.array([_crc32c_py(r.tobytes()) for r in rows], dtype=np.uint32)
