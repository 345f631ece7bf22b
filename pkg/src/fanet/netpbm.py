"""Binary netpbm codecs: P6 (RGB) and P5 (grayscale), maxval 255.

Writers take float images in [0, 1] (or uint8 arrays) and quantize with
round-half-up to even via numpy rounding; readers return uint8 arrays.
Write-then-read is bit-exact on the byte level.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DimensionError, ParseError


def _quantize(img: np.ndarray) -> np.ndarray:
    if img.dtype == np.uint8:
        return img
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _encode(magic: bytes, pixels: np.ndarray) -> bytes:
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def ppm_write(path, img: np.ndarray) -> None:
    """Write an HxWx3 image as binary P6."""
    arr = _quantize(np.asarray(img))
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"ppm_write: expected HxWx3 image, got shape {arr.shape}")
    Path(path).write_bytes(_encode(b"P6", arr))


def pgm_write(path, img: np.ndarray) -> None:
    """Write an HxW image as binary P5."""
    arr = _quantize(np.asarray(img))
    if arr.ndim != 2:
        raise DimensionError(f"pgm_write: expected HxW image, got shape {arr.shape}")
    Path(path).write_bytes(_encode(b"P5", arr))


def _parse(buf: bytes, expected_magic: bytes):
    off = 0

    def skip_whitespace_and_comments():
        nonlocal off
        while off < len(buf):
            ch = buf[off : off + 1]
            if ch in b" \t\r\n":
                off += 1
            elif ch == b"#":
                while off < len(buf) and buf[off : off + 1] != b"\n":
                    off += 1
            else:
                return

    def read_token(what: str) -> bytes:
        nonlocal off
        skip_whitespace_and_comments()
        start = off
        while off < len(buf) and buf[off : off + 1] not in b" \t\r\n":
            off += 1
        if start == off:
            raise ParseError(f"missing {what} in netpbm header", offset=start)
        return buf[start:off]

    magic = buf[:2]
    if magic != expected_magic:
        raise ParseError(
            f"bad magic {magic!r}, expected {expected_magic.decode('ascii')}", offset=0
        )
    off = 2
    try:
        width = int(read_token("width"))
        height = int(read_token("height"))
        maxval = int(read_token("maxval"))
    except ValueError as exc:
        raise ParseError(f"non-numeric netpbm header field: {exc}", offset=off) from exc
    if width <= 0 or height <= 0:
        raise ParseError(f"invalid dimensions {width}x{height}", offset=off)
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}, only 255 is handled", offset=off)
    if off >= len(buf) or buf[off : off + 1] not in b" \t\r\n":
        raise ParseError("missing whitespace after maxval", offset=off)
    off += 1  # single whitespace byte separates header from payload
    return width, height, off


def ppm_read(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    width, height, off = _parse(buf, b"P6")
    need = width * height * 3
    if len(buf) - off < need:
        raise ParseError(
            f"truncated P6 payload: expected {need} bytes, found {len(buf) - off}",
            offset=len(buf),
        )
    return (
        np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
        .reshape(height, width, 3)
        .copy()
    )


def pgm_read(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    width, height, off = _parse(buf, b"P5")
    need = width * height
    if len(buf) - off < need:
        raise ParseError(
            f"truncated P5 payload: expected {need} bytes, found {len(buf) - off}",
            offset=len(buf),
        )
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=off).reshape(height, width).copy()
