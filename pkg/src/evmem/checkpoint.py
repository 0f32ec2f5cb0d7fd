"""Named-parameter checkpoint files.

Layout, little-endian, no padding:

    magic b"MEMC"
    per entry, repeated until end of file:
        name length   u64
        name          UTF-8 bytes
        rank          u64
        dims          u64 * rank
        values        float64 * prod(dims), C order

Entries are written sorted by name so identical parameter dicts always
serialize to identical bytes. Loading reads to EOF and returns plain
float64 arrays.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .autodiff import Tensor

MAGIC = b"MEMC"


class CheckpointError(ValueError):
    pass


def _as_array(value) -> np.ndarray:
    data = value.data if isinstance(value, Tensor) else value
    return np.asarray(data, dtype=np.float64)  # astype below yields C-order bytes


def dump_checkpoint(params: dict) -> bytes:
    chunks = [MAGIC]
    for name in sorted(params):
        arr = _as_array(params[name])
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<Q", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    return b"".join(chunks)


def parse_checkpoint(data: bytes) -> dict:
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}")
    out = {}
    pos = len(MAGIC)
    total = len(data)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > total:
            raise CheckpointError(f"truncated checkpoint: need {pos + n} bytes, have {total}")
        piece = data[pos : pos + n]
        pos += n
        return piece

    while pos < total:
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        count = 1
        for d in dims:
            count *= d
        values = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims)
        out[name] = values.astype(np.float64)  # own writable copy
    return out


def save_checkpoint(params: dict, path) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    data = dump_checkpoint(params)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
