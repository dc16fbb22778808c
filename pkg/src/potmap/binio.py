"""Little-endian binary primitives shared by the dataset and model formats.

Tensors are written as [rank: u32][dims: u32 each][payload: f32 LE,
row-major]; raw parameter payloads as [byte length: u64][f32 LE data].
"""

from __future__ import annotations

import json
import struct

import numpy as np


class FormatError(Exception):
    """Malformed or truncated binary container."""


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True).encode("utf-8")


def write_u64(fh, value: int) -> None:
    fh.write(struct.pack("<Q", value))


def read_u64(fh) -> int:
    raw = fh.read(8)
    if len(raw) != 8:
        raise FormatError("truncated u64 field")
    return struct.unpack("<Q", raw)[0]


def tensor_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def read_tensor(buf: memoryview, offset: int) -> tuple[np.ndarray, int]:
    if offset + 4 > len(buf):
        raise FormatError("truncated tensor rank")
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if rank > 8:
        raise FormatError(f"implausible tensor rank {rank}")
    if offset + 4 * rank > len(buf):
        raise FormatError("truncated tensor dims")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    end = offset + 4 * count
    if end > len(buf):
        raise FormatError("truncated tensor payload")
    arr = np.frombuffer(buf[offset:end], dtype="<f4").reshape(dims)
    return arr.copy(), end


def write_raw_f32(fh, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    write_u64(fh, len(data))
    fh.write(data)


def read_raw_f32(fh, shape) -> np.ndarray:
    length = read_u64(fh)
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    if length != expected:
        raise FormatError(
            f"payload length {length} does not match shape {tuple(shape)}")
    data = fh.read(length)
    if len(data) != length:
        raise FormatError("truncated payload")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()
