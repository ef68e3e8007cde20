"""Named-tensor archive.

Layout: 8-byte little-endian unsigned header length, UTF-8 JSON header
``{name: {"shape": [...], "dtype": "float64", "offset": n}}``, then the
little-endian payloads concatenated in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

SUPPORTED_DTYPES = ("float32", "float64", "int32", "int64", "uint8")


class ArchiveError(Exception):
    pass


class CorruptHeaderError(ArchiveError):
    pass


class PayloadLengthError(ArchiveError):
    pass


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    header, chunks, offset = {}, [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype.name not in SUPPORTED_DTYPES:
            raise ArchiveError(f"{name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        header[name] = {"shape": list(arr.shape), "dtype": arr.dtype.name, "offset": offset}
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps(header).encode()
    return struct.pack("<Q", len(head)) + head + b"".join(chunks)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 8:
        raise CorruptHeaderError("archive shorter than its length prefix")
    (n,) = struct.unpack_from("<Q", blob)
    if 8 + n > len(blob):
        raise CorruptHeaderError(f"header length {n} exceeds file size")
    try:
        header = json.loads(blob[8:8 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptHeaderError(f"unreadable header: {e}") from None
    if not isinstance(header, dict):
        raise CorruptHeaderError("header must be a JSON object")
    payload = memoryview(blob)[8 + n:]
    out, expected = {}, 0
    for name, meta in header.items():
        try:
            shape, dtype, offset = tuple(meta["shape"]), np.dtype(meta["dtype"]), int(meta["offset"])
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptHeaderError(f"{name}: bad entry {meta!r}") from e
        if dtype.name not in SUPPORTED_DTYPES or any(not isinstance(d, int) or d < 0 for d in shape):
            raise CorruptHeaderError(f"{name}: bad dtype or shape")
        if offset != expected:
            raise CorruptHeaderError(f"{name}: offset {offset}, expected {expected}")
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + size > len(payload):
            raise PayloadLengthError(f"{name}: payload truncated")
        arr = np.frombuffer(payload[offset:offset + size], dtype=dtype.newbyteorder("<")).reshape(shape)
        out[name] = arr.astype(dtype)
        expected = offset + size
    if expected != len(payload):
        raise PayloadLengthError(f"payload is {len(payload)} bytes, header describes {expected}")
    return out


def archive_save(tensors: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(encode(tensors))


def archive_load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
