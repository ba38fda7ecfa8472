"""PFM (single-channel float) and binary PPM (P6) encoding.

PFM layout: ``Pf\\n{W} {H}\\n-1.0\\n`` followed by little-endian float32
rows, bottom row first. Only little-endian files are accepted.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    code = "format_error"


class MalformedHeaderError(ImageFormatError):
    code = "malformed_header"


class TruncatedPayloadError(ImageFormatError):
    code = "truncated_payload"


class UnsupportedEndiannessError(ImageFormatError):
    code = "unsupported_endianness"


def write_pfm(depth: np.ndarray) -> bytes:
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError(f"PFM depth must be 2-D, got shape {depth.shape}")
    h, w = depth.shape
    payload = np.ascontiguousarray(depth[::-1], dtype="<f4").tobytes()
    return f"Pf\n{w} {h}\n-1.0\n".encode("ascii") + payload


def _split_header(buf: bytes, nlines: int) -> tuple[list[str], int]:
    lines, pos = [], 0
    for _ in range(nlines):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise MalformedHeaderError("header ends before all fields were read")
        try:
            lines.append(buf[pos:end].decode("ascii").strip())
        except UnicodeDecodeError as exc:
            raise MalformedHeaderError("non-ASCII header") from exc
        pos = end + 1
    return lines, pos


def read_pfm(buf: bytes) -> np.ndarray:
    lines, pos = _split_header(buf, 3)
    if lines[0] != "Pf":
        raise MalformedHeaderError(f"expected 'Pf' magic, got {lines[0]!r}")
    try:
        w, h = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise MalformedHeaderError(f"bad dimensions or scale: {lines[1:]!r}") from exc
    if w < 1 or h < 1 or scale == 0:
        raise MalformedHeaderError(f"invalid dimensions {w}x{h} or zero scale")
    if scale > 0:
        raise UnsupportedEndiannessError("big-endian PFM (positive scale) is not supported")
    need = w * h * 4
    if len(buf) - pos < need:
        raise TruncatedPayloadError(f"payload has {len(buf) - pos} bytes, need {need}")
    data = np.frombuffer(buf, dtype="<f4", count=w * h, offset=pos).reshape(h, w)
    return data[::-1].astype(np.float32)


def write_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"PPM needs an HxWx3 uint8 array, got {rgb.shape} {rgb.dtype}")
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb).tobytes()


def read_ppm(buf: bytes) -> np.ndarray:
    # tokens may be separated by any whitespace and interleaved with comments
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise MalformedHeaderError("header ends before all fields were read")
        if buf[pos:pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P6":
        raise MalformedHeaderError(f"expected 'P6' magic, got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedHeaderError("bad PPM dimensions") from exc
    if w < 1 or h < 1 or maxval != 255:
        raise MalformedHeaderError(f"unsupported PPM geometry {w}x{h} maxval {maxval}")
    need = w * h * 3
    if len(buf) - pos < need:
        raise TruncatedPayloadError(f"payload has {len(buf) - pos} bytes, need {need}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3).copy()


def save_pfm(path: str | Path, depth: np.ndarray) -> None:
    Path(path).write_bytes(write_pfm(depth))


def load_pfm(path: str | Path) -> np.ndarray:
    return read_pfm(Path(path).read_bytes())


def save_ppm(path: str | Path, rgb: np.ndarray) -> None:
    Path(path).write_bytes(write_ppm(rgb))


def load_ppm(path: str | Path) -> np.ndarray:
    return read_ppm(Path(path).read_bytes())
