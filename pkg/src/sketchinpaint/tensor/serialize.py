"""ZTEN tensor records and the checkpoint container.

ZTEN record: b"ZTEN", version 0x01, dtype byte (0x01 float32, 0x02 float64),
rank byte, ``rank`` little-endian u32 extents, row-major little-endian payload.

Checkpoint: u32 entry count, then per entry a u16 name length, the UTF-8 name,
and an embedded ZTEN record.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"ZTEN"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def write_zten(fh: BinaryIO, array) -> None:
    arr = np.asarray(array)
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    code = _DTYPE_CODES[arr.dtype]
    if arr.ndim > 255:
        raise FormatError("rank too large")
    fh.write(MAGIC + bytes([VERSION, code, arr.ndim]))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes())


def read_zten(fh: BinaryIO) -> np.ndarray:
    head = fh.read(7)
    if len(head) != 7 or head[:4] != MAGIC:
        raise FormatError("not a ZTEN record")
    version, code, rank = head[4], head[5], head[6]
    if version != VERSION:
        raise FormatError(f"unsupported ZTEN version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = fh.read(4 * rank)
    if len(dims) != 4 * rank:
        raise FormatError("truncated ZTEN shape")
    shape = struct.unpack(f"<{rank}I", dims)
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    payload = fh.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise FormatError("truncated ZTEN payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def save_tensor(path, array) -> None:
    with open(path, "wb") as fh:
        write_zten(fh, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_zten(fh)


def dumps_checkpoint(entries: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        write_zten(buf, arr)
    return buf.getvalue()


def loads_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    fh = io.BytesIO(blob)
    head = fh.read(4)
    if len(head) != 4:
        raise FormatError("truncated checkpoint header")
    (count,) = struct.unpack("<I", head)
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        raw_len = fh.read(2)
        if len(raw_len) != 2:
            raise FormatError("truncated checkpoint entry")
        (n,) = struct.unpack("<H", raw_len)
        try:
            name = fh.read(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("checkpoint entry name is not UTF-8") from exc
        out[name] = read_zten(fh)
    if fh.read(1):
        raise FormatError("trailing bytes after the last checkpoint entry")
    return out


def save_checkpoint(path, entries: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_checkpoint(entries))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads_checkpoint(Path(path).read_bytes())
