"""Little-endian binary read/write primitives shared by the file formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import FileFormatError


def write_u8(f: BinaryIO, value: int):
    f.write(struct.pack("<B", value))


def write_u32(f: BinaryIO, value: int):
    f.write(struct.pack("<I", value))


def write_u64(f: BinaryIO, value: int):
    f.write(struct.pack("<Q", value))


def write_f64(f: BinaryIO, value: float):
    f.write(struct.pack("<d", value))


def write_array(f: BinaryIO, arr: np.ndarray):
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def write_u32_array(f: BinaryIO, arr: np.ndarray):
    f.write(np.ascontiguousarray(arr, dtype="<u4").tobytes())


def read_exact(f: BinaryIO, count: int) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise FileFormatError(f"truncated file: wanted {count} bytes, got {len(buf)}")
    return buf


def read_u8(f: BinaryIO) -> int:
    return struct.unpack("<B", read_exact(f, 1))[0]


def read_u32(f: BinaryIO) -> int:
    return struct.unpack("<I", read_exact(f, 4))[0]


def read_u64(f: BinaryIO) -> int:
    return struct.unpack("<Q", read_exact(f, 8))[0]


def read_f64(f: BinaryIO) -> float:
    return struct.unpack("<d", read_exact(f, 8))[0]


def read_array(f: BinaryIO, shape: tuple) -> np.ndarray:
    count = int(np.prod(shape))
    buf = read_exact(f, count * 8)
    return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)


def read_u32_array(f: BinaryIO, count: int) -> np.ndarray:
    buf = read_exact(f, count * 4)
    return np.frombuffer(buf, dtype="<u4").astype(np.int64)


def expect_magic(f: BinaryIO, magic: bytes, what: str):
    got = read_exact(f, len(magic))
    if got != magic:
        raise FileFormatError(f"bad magic for {what}: expected {magic!r}, got {got!r}")


def expect_version(f: BinaryIO, version: int, what: str):
    got = read_u32(f)
    if got != version:
        raise FileFormatError(f"unsupported {what} format version {got}, this build reads version {version}")


def expect_eof(f: BinaryIO, what: str):
    if f.read(1):
        raise FileFormatError(f"trailing bytes after {what} payload")
