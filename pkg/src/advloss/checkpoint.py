"""Flat binary container for named parameter arrays.

Layout (all integers little-endian):

    magic   4 bytes  b"ALCK"
    version u32      currently 1
    count   u32      number of records
    record: name_len u16, name utf-8, ndim u8, ndim * u32 dims,
            prod(dims) float64 values (little-endian)
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"ALCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(path, items):
    """Write (name, array-or-tensor) pairs in iteration order."""
    records = [(name, np.asarray(getattr(a, "data", a), dtype=np.float64))
               for name, a in items]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(records)))
        for name, arr in records:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_params(path):
    """Read back the (name, ndarray) records of :func:`save_params`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    pos = 12
    out = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape)
        pos += 8 * n
        out.append((name, arr.astype(np.float64)))
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last record")
    return out
