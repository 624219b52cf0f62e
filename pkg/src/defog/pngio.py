"""Minimal PNG and PPM image I/O.

Supports exactly what the pipeline needs: 8-bit grayscale and RGB, mapped
linearly between bytes and unit-interval floats. The encoder is canonical
(filter 0, fixed zlib level), so saving a loaded file reproduces it byte for
byte. Anything else (16-bit, palette, alpha, interlace) is rejected with a
format diagnostic.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_ZLIB_LEVEL = 6


class ImageFormatError(ValueError):
    pass


def _to_bytes(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ImageFormatError(f"save: expected H x W or H x W x 3 image, got {img.shape}")
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload)))


def save_png(path, img: np.ndarray) -> None:
    data = _to_bytes(img)
    h, w = data.shape[:2]
    color_type = 2 if data.ndim == 3 else 0
    raw = data.reshape(h, -1)
    scanlines = b"".join(b"\x00" + raw[r].tobytes() for r in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    blob = (PNG_SIGNATURE + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(scanlines, _ZLIB_LEVEL))
            + _chunk(b"IEND", b""))
    Path(path).write_bytes(blob)


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(scanlines: bytes, h: int, w: int, channels: int) -> np.ndarray:
    stride = w * channels
    out = np.zeros((h, stride), dtype=np.uint8)
    pos = 0
    prev = np.zeros(stride, dtype=np.int64)
    for r in range(h):
        ftype = scanlines[pos]
        row = np.frombuffer(scanlines, dtype=np.uint8,
                            count=stride, offset=pos + 1).astype(np.int64)
        pos += 1 + stride
        if ftype == 0:
            rec = row
        elif ftype == 1:  # Sub
            rec = row.copy()
            for i in range(channels, stride):
                rec[i] = (rec[i] + rec[i - channels]) & 0xFF
        elif ftype == 2:  # Up
            rec = (row + prev) & 0xFF
        elif ftype == 3:  # Average
            rec = row.copy()
            for i in range(stride):
                left = rec[i - channels] if i >= channels else 0
                rec[i] = (rec[i] + (left + prev[i]) // 2) & 0xFF
        elif ftype == 4:  # Paeth
            rec = row.copy()
            for i in range(stride):
                left = rec[i - channels] if i >= channels else 0
                ul = prev[i - channels] if i >= channels else 0
                rec[i] = (rec[i] + _paeth(int(left), int(prev[i]), int(ul))) & 0xFF
        else:
            raise ImageFormatError(f"PNG: unknown filter type {ftype} in row {r}")
        out[r] = rec.astype(np.uint8)
        prev = rec
    return out


def load_png(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:8] != PNG_SIGNATURE:
        raise ImageFormatError(f"{path}: not a PNG file")
    pos = 8
    ihdr = None
    idat = b""
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos:pos + 4])
        tag = blob[pos + 4:pos + 8]
        payload = blob[pos + 8:pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if ihdr is None:
        raise ImageFormatError(f"{path}: missing IHDR chunk")
    w, h, depth, color_type, compression, filt, interlace = ihdr
    if depth != 8:
        raise ImageFormatError(f"{path}: unsupported bit depth {depth} (only 8-bit supported)")
    if color_type not in (0, 2):
        raise ImageFormatError(
            f"{path}: unsupported color type {color_type} (only grayscale 0 and RGB 2 supported)")
    if interlace != 0:
        raise ImageFormatError(f"{path}: interlaced PNG not supported")
    channels = 3 if color_type == 2 else 1
    raw = _unfilter(zlib.decompress(idat), h, w, channels)
    img = raw.reshape(h, w, channels).astype(np.float64) / 255.0
    return img[..., 0] if channels == 1 else img


def save_ppm(path, img: np.ndarray) -> None:
    data = _to_bytes(img)
    h, w = data.shape[:2]
    magic = b"P6" if data.ndim == 3 else b"P5"
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + data.tobytes())


def load_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported PPM magic {magic!r}")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported PPM maxval {maxval}")
    pos += 1  # single whitespace after maxval
    channels = 3 if magic == b"P6" else 1
    data = np.frombuffer(blob, dtype=np.uint8, count=h * w * channels, offset=pos)
    img = data.reshape(h, w, channels).astype(np.float64) / 255.0
    return img[..., 0] if channels == 1 else img


def save_image(path, img: np.ndarray) -> None:
    ext = Path(path).suffix.lower()
    if ext == ".png":
        save_png(path, img)
    elif ext in (".ppm", ".pgm"):
        save_ppm(path, img)
    else:
        raise ImageFormatError(f"{path}: unsupported image extension {ext!r}")


def load_image(path) -> np.ndarray:
    ext = Path(path).suffix.lower()
    if ext == ".png":
        return load_png(path)
    if ext in (".ppm", ".pgm"):
        return load_ppm(path)
    raise ImageFormatError(f"{path}: unsupported image extension {ext!r}")
