"""The ``TCDT`` binary tensor container and its ASCII debug dump.

Layout: magic ``b"TCDT"``, u32 rank, ``rank`` u32 extents, then the values
as little-endian float64 in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"TCDT"


class FormatError(ValueError):
    pass


def dumps(array) -> bytes:
    arr = np.asarray(array, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + arr.tobytes(order="C")


def loads(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}")
    (rank,) = struct.unpack_from("<I", buf, 4)
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) - offset != 8 * count:
        raise FormatError(f"payload holds {len(buf) - offset} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)


def save(path: Union[str, Path], array) -> None:
    Path(path).write_bytes(dumps(array))


def load(path: Union[str, Path]) -> np.ndarray:
    return loads(Path(path).read_bytes())


def dump_ascii(array) -> str:
    """Human-readable form: a shape line then one row of the last axis per line."""
    arr = np.asarray(array, dtype=np.float64)
    lines = ["shape " + " ".join(str(s) for s in arr.shape)]
    rows = arr.reshape(-1, arr.shape[-1]) if arr.ndim else arr.reshape(1, 1)
    lines.extend(" ".join(repr(float(v)) for v in row) for row in rows)
    return "\n".join(lines) + "\n"
