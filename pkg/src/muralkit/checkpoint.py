"""Binary checkpoint format for named parameter tensors.

Layout: magic ``MERCKPT1`` then, per tensor, little-endian fields:
name length (u16), UTF-8 name, dtype code (u8, 0 = float32), rank (u8),
dims (u32 each), raw float32 data.  The stream ends at EOF; shapes are
self-describing so network widths need no side channel.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"MERCKPT1"
DTYPE_F32 = 0


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
        name_b = name.encode("utf-8")
        out.append(struct.pack("<H", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f4").tobytes())
    return b"".join(out)


def loads(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    tensors: dict[str, np.ndarray] = {}
    while pos < len(data):
        if pos + 2 > len(data):
            raise CheckpointError(f"truncated tensor header at byte {pos}")
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 2 > len(data):
            raise CheckpointError(f"truncated tensor {name!r}")
        dtype_code, rank = struct.unpack_from("<BB", data, pos)
        pos += 2
        if dtype_code != DTYPE_F32:
            raise CheckpointError(f"unsupported dtype code {dtype_code} for {name!r}")
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        nbytes = count * 4
        if pos + nbytes > len(data):
            raise CheckpointError(f"truncated data for {name!r}")
        arr = np.frombuffer(data[pos : pos + nbytes], dtype="<f4").reshape(dims)
        pos += nbytes
        tensors[name] = arr.astype(np.float32)
    return tensors


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
