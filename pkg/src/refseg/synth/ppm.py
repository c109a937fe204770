"""Minimal binary PPM (P6) and PBM (P4) readers/writers."""

from __future__ import annotations

import numpy as np

__all__ = ["write_ppm", "read_ppm", "write_pbm", "read_pbm"]


def write_ppm(path: str, img: np.ndarray) -> None:
    """``img`` is ``(H, W, 3)`` uint8."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"write_ppm expects (H,W,3) uint8, got {img.shape} {img.dtype}")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())


def _read_header(f, magic: bytes, n_fields: int) -> list[int]:
    if f.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < n_fields:
        line = f.readline()
        if not line:
            raise ValueError("truncated header")
        body = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in body.split())
    return fields


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        w, h, maxval = _read_header(f, b"P6", 3)
        if maxval != 255:
            raise ValueError(f"unsupported maxval {maxval}")
        data = f.read(w * h * 3)
    if len(data) != w * h * 3:
        raise ValueError("truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def write_pbm(path: str, mask: np.ndarray) -> None:
    """1-bit portable bitmap; foreground pixels (True) are written black."""
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise ValueError(f"write_pbm expects (H,W), got {mask.shape}")
    h, w = mask.shape
    packed = np.packbits(mask, axis=1)
    with open(path, "wb") as f:
        f.write(f"P4\n{w} {h}\n".encode())
        f.write(packed.tobytes())


def read_pbm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P4", 2)
        row_bytes = (w + 7) // 8
        data = f.read(row_bytes * h)
    if len(data) != row_bytes * h:
        raise ValueError("truncated pixel data")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8).reshape(h, row_bytes), axis=1)
    return bits[:, :w].astype(bool)
