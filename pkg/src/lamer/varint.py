"""Vectorized LEB128-style variable-byte coding for unsigned integer arrays.

Each value is written little-endian in 7-bit groups; the high bit is set on
every byte except the last one of a value.
"""

from __future__ import annotations

import numpy as np

_MAX_BYTES = 10  # enough for any uint64


def encode(values: np.ndarray) -> bytes:
    v = np.asarray(values, dtype=np.uint64)
    if v.size == 0:
        return b""
    nbytes = np.ones(v.shape, dtype=np.int64)
    for j in range(1, _MAX_BYTES):
        nbytes += v >= np.uint64(1) << np.uint64(7 * j)
    starts = np.cumsum(nbytes) - nbytes
    out = np.zeros(int(nbytes.sum()), dtype=np.uint8)
    for j in range(int(nbytes.max())):
        sel = nbytes > j
        group = (v[sel] >> np.uint64(7 * j)) & np.uint64(0x7F)
        cont = (nbytes[sel] - 1 > j).astype(np.uint64) << np.uint64(7)
        out[starts[sel] + j] = (group | cont).astype(np.uint8)
    return out.tobytes()


def decode(buf: bytes | np.ndarray) -> np.ndarray:
    b = np.frombuffer(buf, dtype=np.uint8) if isinstance(buf, (bytes, bytearray, memoryview)) else buf
    if b.size == 0:
        return np.zeros(0, dtype=np.uint64)
    ends = np.flatnonzero(b < 0x80)
    if ends.size == 0 or ends[-1] != b.size - 1:
        raise ValueError("truncated varint stream")
    starts = np.empty_like(ends)
    starts[0] = 0
    starts[1:] = ends[:-1] + 1
    lengths = ends - starts + 1
    if lengths.max() > _MAX_BYTES:
        raise ValueError("varint longer than 10 bytes")
    pos = np.arange(b.size) - np.repeat(starts, lengths)
    payload = (b & 0x7F).astype(np.uint64) << (pos.astype(np.uint64) * np.uint64(7))
    return np.add.reduceat(payload, starts)


def delta_encode(sorted_values: np.ndarray) -> np.ndarray:
    v = np.asarray(sorted_values, dtype=np.int64)
    if v.size == 0:
        return v
    return np.diff(v, prepend=0)


def delta_decode(gaps: np.ndarray) -> np.ndarray:
    return np.cumsum(np.asarray(gaps, dtype=np.int64))
