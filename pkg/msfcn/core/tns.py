# msfcn/core/tns.py
"""Bit-exact TNS1 raster/tensor interchange.

Layout: b"TNS1", dtype code (1 = f32, 2 = u16), rank, two reserved zero
bytes, rank little-endian u32 extents, row-major little-endian payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from msfcn.core.tensor import MAX_RANK, check_extents
from msfcn.errors import FormatError

MAGIC = b"TNS1"
HEADER = struct.Struct("<4sBBH")

DTYPE_BY_CODE = {
    1: np.dtype("<f4"),
    2: np.dtype("<u2"),
}
CODE_BY_KIND = {
    np.dtype(np.float32): 1,
    np.dtype(np.uint16): 2,
}


def encode_tensor(x: np.ndarray) -> bytes:
    code = CODE_BY_KIND.get(np.dtype(x.dtype).newbyteorder("="))
    if code is None:
        raise FormatError(f"dtype {x.dtype} has no TNS code (f32 and u16 only)")
    extents = check_extents(x.shape)
    head = HEADER.pack(MAGIC, code, len(extents), 0)
    dims = struct.pack(f"<{len(extents)}I", *extents)
    payload = np.ascontiguousarray(x, dtype=DTYPE_BY_CODE[code]).tobytes(order="C")
    return head + dims + payload


def decode_tensor(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(raw)} bytes)")
    magic, code, rank, reserved = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if code not in DTYPE_BY_CODE:
        raise FormatError(f"{source}: bad dtype code {code}")
    if not 1 <= rank <= MAX_RANK:
        raise FormatError(f"{source}: bad rank {rank}")
    if reserved != 0:
        raise FormatError(f"{source}: reserved bytes are {reserved:#06x}, expected zero")
    offset = HEADER.size
    if len(raw) < offset + 4 * rank:
        raise FormatError(f"{source}: truncated extents")
    extents = struct.unpack_from(f"<{rank}I", raw, offset)
    if any(e == 0 for e in extents):
        raise FormatError(f"{source}: bad extent 0 in {extents}")
    offset += 4 * rank
    dtype = DTYPE_BY_CODE[code]
    expected = int(np.prod(extents, dtype=np.int64)) * dtype.itemsize
    body = len(raw) - offset
    if body < expected:
        raise FormatError(f"{source}: truncated payload ({body} of {expected} bytes)")
    if body > expected:
        raise FormatError(f"{source}: {body - expected} trailing bytes after payload")
    arr = np.frombuffer(raw, dtype=dtype, count=expected // dtype.itemsize, offset=offset)
    return arr.reshape(extents).astype(dtype.newbyteorder("="))


def save_tensor(x: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(x))
    return path


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"{path}: cannot read ({e})") from e
    return decode_tensor(raw, source=str(path))
