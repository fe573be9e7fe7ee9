"""Weight checkpoint I/O.

Layout (little-endian)::

    b"NNAD" | u8 version | u32 n_tensors
    repeated: u32 name_len | name (utf-8) | u32 rank | rank * u32 dims | f32 values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"NNAD"
VERSION = 1


def encode_state(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<BI", VERSION, len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def decode_state(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise FormatError("bad magic, expected b'NNAD'", 0)
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError("truncated checkpoint", pos)
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (version,) = take("<B")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (count,) = take("<I")
    state = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if pos + name_len > len(buf):
            raise FormatError("truncated tensor name", pos)
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        n = int(np.prod(shape)) if rank else 1
        if pos + 4 * n > len(buf):
            raise FormatError(f"truncated values for {name!r}", pos)
        state[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * n
    if pos != len(buf):
        raise FormatError("trailing bytes after last tensor", pos)
    return state


def save_checkpoint(path, state: dict[str, np.ndarray]):
    Path(path).write_bytes(encode_state(state))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_state(Path(path).read_bytes())
