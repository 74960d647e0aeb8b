"""NTF v1 named-tensor checkpoint files.

Layout (all integers little-endian)::

    b"NTF1"
    u32  entry count
    per entry:
        u32  name length in bytes
        ...  UTF-8 name
        u32  rank
        u64  dims[rank]
        u8   dtype code (0 = float64)
        ...  raw little-endian payload, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .errors import ValidationError

MAGIC = b"NTF1"
DTYPES = {0: np.dtype("<f8")}


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8", order="C")  # keeps rank 0, unlike ascontiguousarray
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(struct.pack("<B", 0))
        parts.append(arr.tobytes())
    return b"".join(parts)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValidationError("truncated NTF file")
    return buf


def load_stream(fh: BinaryIO) -> dict[str, np.ndarray]:
    if _read_exact(fh, 4) != MAGIC:
        raise ValidationError("not an NTF v1 file (bad magic)")
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", _read_exact(fh, 4))
        name = _read_exact(fh, nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(fh, 4))
        dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
        (code,) = struct.unpack("<B", _read_exact(fh, 1))
        if code not in DTYPES:
            raise ValidationError(f"unsupported dtype code {code} for {name!r}")
        dt = DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64))
        payload = _read_exact(fh, n * dt.itemsize)
        if name in out:
            raise ValidationError(f"duplicate entry {name!r}")
        out[name] = np.frombuffer(payload, dtype=dt).astype(np.float64).reshape(dims)
    return out


def loads(blob: bytes) -> dict[str, np.ndarray]:
    import io

    return load_stream(io.BytesIO(blob))


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return load_stream(fh)
