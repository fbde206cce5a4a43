"""Netpbm-family image emit and parse.

PFM  "PF\\n<W> <H>\\n-1.0\\n" + little-endian float32 RGB, rows bottom to top
     (the format is single precision; float64 inputs are rounded once)
PGM  "P5\\n<W> <H>\\n255\\n" + one byte per pixel, value round(clip(m, 0, 1) * 255)
PPM  "P6\\n<W> <H>\\n255\\n" + RGB bytes; normals map as round((n + 1) / 2 * 255)
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

FORMATS = ("pfm", "pgm", "ppm")


class ImageFormatError(ValueError):
    pass


def encode_pfm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"PFM needs an (H, W, 3) image, got {img.shape}")
    h, w, _ = img.shape
    body = np.ascontiguousarray(img[::-1].astype("<f4")).tobytes()
    return f"PF\n{w} {h}\n-1.0\n".encode("ascii") + body


def _header(data: bytes, magic: bytes, n_fields: int) -> tuple[list[bytes], int]:
    fields, pos = [], 0
    while len(fields) < n_fields:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated image header")
        fields.append(data[start:pos])
    if fields[0] != magic:
        raise ImageFormatError(f"expected magic {magic!r}, found {fields[0]!r}")
    return fields, pos + 1  # exactly one whitespace byte ends the header


def decode_pfm(data: bytes) -> np.ndarray:
    fields, pos = _header(data, b"PF", 4)
    w, h, scale = int(fields[1]), int(fields[2]), float(fields[3])
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * 3 * 4
    if len(data) - pos != need:
        raise ImageFormatError(f"PFM payload is {len(data) - pos} bytes, expected {need}")
    arr = np.frombuffer(data, dtype=dtype, count=w * h * 3, offset=pos).reshape(h, w, 3)
    return arr[::-1].astype(np.float32)


def encode_pgm(mask: np.ndarray) -> bytes:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ImageFormatError(f"PGM needs an (H, W) mask, got {mask.shape}")
    h, w = mask.shape
    body = np.rint(np.clip(mask, 0.0, 1.0) * 255.0).astype(np.uint8).tobytes()
    return f"P5\n{w} {h}\n255\n".encode("ascii") + body


def decode_pgm(data: bytes) -> np.ndarray:
    fields, pos = _header(data, b"P5", 4)
    w, h = int(fields[1]), int(fields[2])
    if len(data) - pos != w * h:
        raise ImageFormatError("PGM payload size mismatch")
    return np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(h, w).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"PPM needs an (H, W, 3) image, got {img.shape}")
    h, w, _ = img.shape
    body = np.rint(np.clip((img + 1.0) / 2.0, 0.0, 1.0) * 255.0).astype(np.uint8).tobytes()
    return f"P6\n{w} {h}\n255\n".encode("ascii") + body


def decode_ppm(data: bytes) -> np.ndarray:
    fields, pos = _header(data, b"P6", 4)
    w, h = int(fields[1]), int(fields[2])
    if len(data) - pos != w * h * 3:
        raise ImageFormatError("PPM payload size mismatch")
    return np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(h, w, 3).copy()


def write_image(image, path, fmt: str | None = None) -> Path:
    """Write a normal image (PFM/PPM) or a mask (PGM). ``image`` may also be
    a RenderBuffers; PGM then takes its mask and PFM/PPM its normals."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in FORMATS:
        raise ImageFormatError(f"unsupported image format {fmt!r}; use one of {FORMATS}")
    if hasattr(image, "mask") and hasattr(image, "normal"):
        buf = image.numpy()
        image = buf.mask if fmt == "pgm" else buf.normal
    enc = {"pfm": encode_pfm, "pgm": encode_pgm, "ppm": encode_ppm}[fmt]
    path.write_bytes(enc(image))
    return path


def read_image(path, fmt: str | None = None) -> np.ndarray:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    dec = {"pfm": decode_pfm, "pgm": decode_pgm, "ppm": decode_ppm}.get(fmt)
    if dec is None:
        raise ImageFormatError(f"unsupported image format {fmt!r}")
    return dec(path.read_bytes())
