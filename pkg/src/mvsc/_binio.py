"""Little-endian helpers for the MVSC binary containers."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import CorruptionError, FormatError

MAGIC_LEN = 8


def write_magic(fh: BinaryIO, magic: bytes) -> None:
    assert len(magic) == MAGIC_LEN
    fh.write(magic)


def read_magic(fh: BinaryIO, expected: bytes, path) -> None:
    magic = fh.read(MAGIC_LEN)
    if magic != expected:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {expected!r}")


def write_u32(fh: BinaryIO, *values: int) -> None:
    fh.write(struct.pack(f"<{len(values)}I", *values))


def read_u32(fh: BinaryIO, count: int, path) -> tuple[int, ...]:
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise CorruptionError(f"{path}: truncated header")
    return struct.unpack(f"<{count}I", raw)


def write_f32(fh: BinaryIO, array: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_f32(fh: BinaryIO, count: int, path, *, exact_end: bool = True) -> np.ndarray:
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise CorruptionError(f"{path}: payload has {len(raw) // 4} floats, header declares {count}")
    if exact_end and fh.read(1):
        raise CorruptionError(f"{path}: trailing bytes after declared payload")
    return np.frombuffer(raw, dtype="<f4").astype(np.float32)
