"""Raw little-endian tensor dumps.

A tensor record is ``b"DPNT"``, then bytes ``version, dtype code, ndim, 0``,
then ``ndim`` uint32 dims, then the payload in C order.  An archive is
``b"DPNA"``, a uint32 record count, and per record a uint16 name length, the
UTF-8 name and a tensor record.
"""

from __future__ import annotations

import struct

import numpy as np

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class TruncatedDump(ValueError):
    pass


def tensor_bytes(arr) -> bytes:
    arr = np.asarray(arr)
    code = _CODES[arr.dtype]
    head = b"DPNT" + struct.pack("<4B", 1, code, arr.ndim, 0) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def read_tensor(buf: bytes, offset: int = 0):
    """Decode one record; returns ``(array, next_offset)``."""
    if buf[offset:offset + 4] != b"DPNT":
        raise ValueError("bad tensor magic")
    if len(buf) < offset + 8:
        raise TruncatedDump("header")
    version, code, ndim, _ = struct.unpack_from("<4B", buf, offset + 4)
    if version != 1 or code not in _DTYPES:
        raise ValueError(f"unsupported tensor record v{version} dtype {code}")
    offset += 8
    if len(buf) < offset + 4 * ndim:
        raise TruncatedDump("dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    dt = _DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) < offset + nbytes:
        raise TruncatedDump("payload")
    arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=offset).reshape(dims)
    return arr.astype(dt.newbyteorder("="), copy=True), offset + nbytes


def save_tensors(path, tensors: dict) -> None:
    parts = [b"DPNA", struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode()
        parts += [struct.pack("<H", len(raw)), raw, tensor_bytes(arr)]
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_tensors(path) -> dict:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != b"DPNA":
        raise ValueError(f"{path}: not a tensor archive")
    (count,) = struct.unpack_from("<I", buf, 4)
    off = 8
    out = {}
    for _ in range(count):
        if len(buf) < off + 2:
            raise TruncatedDump("name")
        (ln,) = struct.unpack_from("<H", buf, off)
        name = buf[off + 2:off + 2 + ln].decode()
        arr, off = read_tensor(buf, off + 2 + ln)
        out[name] = arr
    return out
