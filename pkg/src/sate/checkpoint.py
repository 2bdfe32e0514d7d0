"""Flat binary checkpoints of named float32 arrays.

Layout: the magic ``SATECKPT1`` then, per parameter, the name length (u32
LE), the UTF-8 name, the rank (u32 LE), each extent (u32 LE) and the
row-major float32 LE values.  Records run to end of file.
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"SATECKPT1"


class CheckpointError(ValueError):
    pass


def dumps(state: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    for name, arr in state.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> dict[str, np.ndarray]:
    if not data.startswith(MAGIC):
        raise CheckpointError("missing SATECKPT1 header")
    pos = len(MAGIC)
    state: dict[str, np.ndarray] = {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(data):
                raise CheckpointError(f"truncated values for {name!r}")
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
            state[name] = arr.astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError(f"truncated record at byte {pos}") from exc
    return state


def save_checkpoint(path, state: Mapping[str, np.ndarray]) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(state))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def average_checkpoints(items: Iterable) -> dict[str, np.ndarray]:
    """Elementwise mean of checkpoints given as paths or state dicts.

    Values are summed in sorted order in float64, so the result does not
    depend on the order of ``items``.
    """
    states = [load_checkpoint(i) if isinstance(i, (str, os.PathLike)) else i for i in items]
    if not states:
        raise CheckpointError("nothing to average")
    names = list(states[0])
    for s in states[1:]:
        if set(s) != set(names):
            raise CheckpointError("checkpoints hold different parameter sets")
    out = {}
    for name in names:
        shapes = {np.shape(s[name]) for s in states}
        if len(shapes) != 1:
            raise CheckpointError(f"{name!r} has inconsistent shapes {sorted(shapes)}")
        stacked = np.sort(np.stack([np.asarray(s[name], dtype=np.float64) for s in states]), axis=0)
        out[name] = (stacked.sum(axis=0) / len(states)).astype(np.float32)
    return out
