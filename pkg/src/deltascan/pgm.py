"""Binary greyscale PGM (P5, maxval 255) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PGMError(ValueError):
    pass


def _tokens(data: bytes, count: int):
    # Header tokens are whitespace separated; '#' starts a comment running to end of line.
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i >= len(data):
            raise PGMError("truncated header")
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        tokens.append(data[i:j])
        i = j
    # exactly one whitespace byte separates maxval from the raster
    if i >= len(data) or not data[i:i + 1].isspace():
        raise PGMError("missing whitespace after header")
    return tokens, i + 1


def decode_pgm(data: bytes) -> np.ndarray:
    if data[:2] != b"P5":
        raise PGMError(f"bad magic {data[:2]!r}, expected b'P5'")
    (width, height, maxval), start = _tokens(data[2:], 3)
    try:
        W, H, maxv = int(width), int(height), int(maxval)
    except ValueError:
        raise PGMError("non-integer header field") from None
    if maxv != 255:
        raise PGMError(f"maxval {maxv} unsupported, expected 255")
    if W < 1 or H < 1:
        raise PGMError(f"bad extents {W}x{H}")
    raster = data[2 + start:]
    if len(raster) < W * H:
        raise PGMError(f"truncated payload: {len(raster)} of {W * H} bytes")
    pixels = np.frombuffer(raster[:W * H], dtype=np.uint8).reshape(H, W, 1)
    return pixels / 255.0


def encode_pgm(grid) -> bytes:
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim == 3:
        if g.shape[2] != 1:
            raise PGMError(f"PGM holds one channel, grid has {g.shape[2]}")
        g = g[:, :, 0]
    if g.ndim != 2 or g.size == 0:
        raise PGMError(f"bad grid shape {np.shape(grid)}")
    if not np.all((g >= 0) & (g <= 1)):
        raise PGMError("pixel values must lie in [0, 1]")
    H, W = g.shape
    return f"P5\n{W} {H}\n255\n".encode() + np.rint(g * 255).astype(np.uint8).tobytes()


def pgm_read(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def pgm_write(grid, path) -> None:
    Path(path).write_bytes(encode_pgm(grid))
