"""Run-length codec for binary masks.

Runs are row-major and alternate background/foreground, always starting with
background — an all-foreground mask therefore begins with a zero-length run.
"""

from __future__ import annotations

import numpy as np

__all__ = ["BadRunSum", "rle_encode", "rle_decode"]


class BadRunSum(ValueError):
    """Run lengths do not total the mask size (or a run is negative)."""


def rle_encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask).astype(bool).reshape(-1)
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    total = h * w
    if any(r < 0 for r in runs):
        raise BadRunSum(f"negative run in {runs[:8]}...")
    if sum(runs) != total:
        raise BadRunSum(f"runs total {sum(runs)}, expected {total}")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    fg = False
    for r in runs:
        if fg:
            flat[pos : pos + r] = True
        pos += r
        fg = not fg
    return flat.reshape(h, w)
