"""Flat float64 checkpoint container.

Layout: one line of compact JSON, ``\\n``, then the raw little-endian float64
blob.  The header lists ``(name, shape, offset, frozen)`` per entry — offsets
are element offsets into the blob — plus an optional ``meta`` dict for small
scalar state (e.g. the optimizer step counter).  Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Iterable

import numpy as np

__all__ = [
    "MissingCheckpoint",
    "write_checkpoint",
    "read_checkpoint",
    "read_checkpoint_meta",
    "checkpoint_hash",
    "save_module",
    "load_module",
]


class MissingCheckpoint(FileNotFoundError):
    """Checkpoint path does not exist or is not a readable container."""


def write_checkpoint(
    path: str,
    entries: Iterable[tuple[str, np.ndarray, bool]],
    meta: dict | None = None,
) -> None:
    """Write ``(name, array, frozen)`` entries; order is preserved."""
    listing = []
    chunks = []
    offset = 0
    for name, arr, frozen in entries:
        arr = np.asarray(arr, dtype=np.float64)
        listing.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "frozen": bool(frozen)}
        )
        # record shape first: ascontiguousarray promotes 0-d scalars to (1,)
        chunks.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
        offset += arr.size
    header = {"format": "flat-f64", "entries": listing}
    if meta:
        header["meta"] = meta
    payload = json.dumps(header, separators=(",", ":"), sort_keys=True).encode() + b"\n"
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
        for c in chunks:
            f.write(c)
    os.replace(tmp, path)


def read_checkpoint(path: str) -> tuple[dict[str, tuple[np.ndarray, bool]], dict]:
    """Load a container; returns (name → (array, frozen), meta)."""
    if not os.path.exists(path):
        raise MissingCheckpoint(path)
    with open(path, "rb") as f:
        head = f.readline()
        blob = f.read()
    try:
        header = json.loads(head)
        listing = header["entries"]
    except (ValueError, KeyError) as e:
        raise MissingCheckpoint(f"{path}: not a checkpoint container ({e})")
    flat = np.frombuffer(blob, dtype="<f8")
    out: dict[str, tuple[np.ndarray, bool]] = {}
    for ent in listing:
        shape = tuple(ent["shape"])
        n = int(np.prod(shape)) if shape else 1
        lo = ent["offset"]
        arr = flat[lo : lo + n].reshape(shape).astype(np.float64)
        out[ent["name"]] = (arr, bool(ent["frozen"]))
    return out, header.get("meta", {})


def read_checkpoint_meta(path: str) -> dict:
    """Header-only read — cheap access to the meta dict."""
    if not os.path.exists(path):
        raise MissingCheckpoint(path)
    with open(path, "rb") as f:
        head = f.readline()
    try:
        return json.loads(head).get("meta", {})
    except ValueError as e:
        raise MissingCheckpoint(f"{path}: not a checkpoint container ({e})")


def checkpoint_hash(path: str) -> str:
    """SHA-256 of the container bytes (header + blob)."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_module(path: str, module, meta: dict | None = None) -> None:
    entries = [(n, p.data, p.frozen) for n, p in module.named_parameters()]
    write_checkpoint(path, entries, meta=meta)


def load_module(path: str, module) -> dict:
    """Restore parameters in place; names and shapes must match exactly."""
    loaded, meta = read_checkpoint(path)
    params = dict(module.named_parameters())
    if set(loaded) != set(params):
        missing = sorted(set(params) - set(loaded))
        extra = sorted(set(loaded) - set(params))
        raise MissingCheckpoint(f"{path}: parameter names differ; missing={missing} extra={extra}")
    for name, p in params.items():
        arr, _frozen = loaded[name]
        if arr.shape != p.data.shape:
            raise MissingCheckpoint(f"{path}: {name} shape {arr.shape} vs model {p.data.shape}")
        p.data[...] = arr
    return meta
