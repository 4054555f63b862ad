"""Parameter checkpoint file I/O.

Layout (all integers little-endian):
  magic "GGHMCKPT" | version u32 | count u32
  per parameter: name_len u32 | name utf-8 | rank u32 | dims u64 each
                 | float32 payload, row-major
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"GGHMCKPT"
VERSION = 1


def write_checkpoint(path, named_arrays):
    """Write an ordered {name: ndarray} mapping."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(named_arrays)))
        for name, arr in named_arrays.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(path):
    """Read back {name: float32 ndarray}, raising FormatError with byte offsets."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, n, what):
        if offset + n > len(blob):
            raise FormatError(
                f"checkpoint truncated at byte {len(blob)} reading {what} "
                f"(needed {offset + n})")
        return blob[offset:offset + n]

    if blob[:8] != MAGIC:
        raise FormatError(f"bad checkpoint magic at byte 0: {blob[:8]!r}")
    version, count = struct.unpack("<II", need(8, 8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at byte 8")
    off = 16
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", need(off, 4, "name length"))
        off += 4
        name = need(off, name_len, "name").decode("utf-8")
        off += name_len
        (rank,) = struct.unpack("<I", need(off, 4, "rank"))
        off += 4
        dims = struct.unpack(f"<{rank}Q", need(off, 8 * rank, "dims"))
        off += 8 * rank
        n = 1
        for d in dims:
            n *= d
        payload = need(off, 4 * n, f"payload of {name!r}")
        off += 4 * n
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return out
