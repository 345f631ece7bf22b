"""Binary checkpoint container for named tensors.

Layout: magic ``FANT``, u32 little-endian version (currently 1), u32 tensor
count, then per tensor a u16 name length, the UTF-8 name, a u8 rank, u32
extents, and the float32 little-endian payload. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"FANT"
VERSION = 1


def save_checkpoint(path, tensors: dict[str, "np.ndarray"]) -> None:
    """Write named arrays (or Tensors) as float32 in insertion order."""
    blobs = []
    for name, value in tensors.items():
        # tobytes() always serializes in C order, so no contiguity fix-up
        # (which would also promote rank-0 arrays to rank 1)
        arr = np.asarray(getattr(value, "data", value), dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ParseError(f"tensor name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise ParseError(f"tensor rank {arr.ndim} exceeds format limit")
        header = struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", arr.ndim)
        header += b"".join(struct.pack("<I", d) for d in arr.shape)
        blobs.append(header + arr.tobytes())
    payload = MAGIC + struct.pack("<II", VERSION, len(tensors)) + b"".join(blobs)
    Path(path).write_bytes(payload)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(buf):
            raise ParseError(f"truncated checkpoint while reading {what}", offset=off)
        chunk = buf[off : off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise ParseError("bad checkpoint magic", offset=0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", offset=4)
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims")) if rank else ()
        numel = 1
        for d in dims:
            numel *= d
        data = np.frombuffer(take(4 * numel, f"payload of {name!r}"), dtype="<f4")
        out[name] = data.reshape(dims).copy()
    if off != len(buf):
        raise ParseError("trailing bytes after last tensor", offset=off)
    return out
