"""Neural-net operations on top of the tensor tape.

Each op validates shapes eagerly, computes in float64 and registers an exact
backward closure.  Conventions: feature maps are channels-first ``(C, H, W)``,
token matrices are ``(T, C)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ShapeMismatch, Tensor, _accum, _make

__all__ = [
    "BadGroupCount",
    "softmax",
    "linear",
    "layer_norm",
    "group_norm",
    "conv3x3",
    "bilinear_upsample_2x",
    "concat_channels",
    "stop_gradient",
    "embedding",
    "cross_entropy_2class",
]


class BadGroupCount(ValueError):
    """Channel count is not divisible by the requested group count."""


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilised softmax along ``axis`` (max-subtraction)."""
    axis = axis if axis >= 0 else x.data.ndim + axis
    if not 0 <= axis < x.data.ndim:
        raise ShapeMismatch(f"softmax axis {axis} out of range for {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, y * (g - dot))

    return _make(y, (x,), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``y = x @ w + b``."""
    if x.data.shape[-1] != w.data.shape[0] or w.data.ndim != 2:
        raise ShapeMismatch(f"linear: x {x.shape} with w {w.shape}")
    if b is not None and b.data.shape != (w.data.shape[1],):
        raise ShapeMismatch(f"linear: bias {b.shape} with w {w.shape}")
    lead = x.data.shape[:-1]
    c_in, c_out = w.data.shape
    x2 = x.data.reshape(-1, c_in)
    y2 = x2 @ w.data
    if b is not None:
        y2 = y2 + b.data

    def bw(g):
        g2 = g.reshape(-1, c_out)
        _accum(x, (g2 @ w.data.T).reshape(x.data.shape))
        _accum(w, x2.T @ g2)
        if b is not None:
            _accum(b, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(y2.reshape(lead + (c_out,)), parents, bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then affine."""
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatch(f"layer_norm affine shapes {gamma.shape}/{beta.shape} for C={c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def bw(g):
        _accum(beta, g.reshape(-1, c).sum(axis=0))
        _accum(gamma, (g * xhat).reshape(-1, c).sum(axis=0))
        gx = g * gamma.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (gx - m1 - xhat * m2))

    return _make(y, (x, gamma, beta), bw)


def group_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-6
) -> Tensor:
    """Group normalisation over a ``(C, H, W)`` map with per-channel affine."""
    if x.data.ndim != 3:
        raise ShapeMismatch(f"group_norm expects (C,H,W), got {x.shape}")
    c, h, w = x.data.shape
    if groups < 1 or c % groups != 0:
        raise BadGroupCount(f"C={c} not divisible by groups={groups}")
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatch(f"group_norm affine shapes {gamma.shape}/{beta.shape} for C={c}")
    xg = x.data.reshape(groups, -1)
    mu = xg.mean(axis=1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(c, h, w)
    y = xhat * gamma.data[:, None, None] + beta.data[:, None, None]

    def bw(g):
        _accum(beta, g.sum(axis=(1, 2)))
        _accum(gamma, (g * xhat).sum(axis=(1, 2)))
        gx = (g * gamma.data[:, None, None]).reshape(groups, -1)
        xh = xhat.reshape(groups, -1)
        m1 = gx.mean(axis=1, keepdims=True)
        m2 = (gx * xh).mean(axis=1, keepdims=True)
        _accum(x, (inv * (gx - m1 - xh * m2)).reshape(c, h, w))

    return _make(y, (x, gamma, beta), bw)


def conv3x3(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """3x3 convolution with zero padding 1 and stride 1 (direct loops).

    ``x`` is ``(C_in, H, W)``, ``w`` is ``(C_out, C_in, 3, 3)``.  Spatial size
    is preserved.
    """
    if x.data.ndim != 3:
        raise ShapeMismatch(f"conv3x3 expects (C,H,W), got {x.shape}")
    if w.data.ndim != 4 or w.data.shape[2:] != (3, 3) or w.data.shape[1] != x.data.shape[0]:
        raise ShapeMismatch(f"conv3x3 weight {w.shape} for input {x.shape}")
    c_in, h, wd = x.data.shape
    c_out = w.data.shape[0]
    if b is not None and b.data.shape != (c_out,):
        raise ShapeMismatch(f"conv3x3 bias {b.shape} for C_out={c_out}")
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    # Shifted views, flattened once; the conv is 9 small matmuls.
    shifts = [
        np.ascontiguousarray(xp[:, dy : dy + h, dx : dx + wd]).reshape(c_in, h * wd)
        for dy in range(3)
        for dx in range(3)
    ]
    y = np.zeros((c_out, h * wd))
    for k, sh in enumerate(shifts):
        y += w.data[:, :, k // 3, k % 3] @ sh
    if b is not None:
        y += b.data[:, None]

    def bw(g):
        g2 = g.reshape(c_out, h * wd)
        if b is not None:
            _accum(b, g2.sum(axis=1))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for k, sh in enumerate(shifts):
                gw[:, :, k // 3, k % 3] = g2 @ sh.T
            _accum(w, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(9):
                dy, dx = k // 3, k % 3
                gxp[:, dy : dy + h, dx : dx + wd] += (
                    w.data[:, :, dy, dx].T @ g2
                ).reshape(c_in, h, wd)
            _accum(x, gxp[:, 1 : 1 + h, 1 : 1 + wd])

    parents = (x, w) if b is None else (x, w, b)
    return _make(y.reshape(c_out, h, wd), parents, bw)


def _upsample_matrix(n: int) -> np.ndarray:
    """Row-interpolation matrix for 2x bilinear with half-pixel centers.

    Output sample ``o`` reads source coordinate ``(o + 0.5)/2 - 0.5`` with
    border clamping (the align-corners=false convention).
    """
    m = np.zeros((2 * n, n))
    for o in range(2 * n):
        src = (o + 0.5) / 2.0 - 0.5
        j0 = int(np.floor(src))
        t = src - j0
        lo = min(max(j0, 0), n - 1)
        hi = min(max(j0 + 1, 0), n - 1)
        m[o, lo] += 1.0 - t
        m[o, hi] += t
    return m


_UPSAMPLE_CACHE: dict[int, np.ndarray] = {}


def _upsample_rows(n: int) -> np.ndarray:
    if n not in _UPSAMPLE_CACHE:
        _UPSAMPLE_CACHE[n] = _upsample_matrix(n)
    return _UPSAMPLE_CACHE[n]


def bilinear_upsample_2x(x: Tensor) -> Tensor:
    """Double the spatial size of a ``(C, H, W)`` map by bilinear interpolation.

    Uses half-pixel sample centers (align-corners=false); constant maps are
    preserved exactly and the op is linear in its input.
    """
    if x.data.ndim != 3:
        raise ShapeMismatch(f"bilinear_upsample_2x expects (C,H,W), got {x.shape}")
    _, h, w = x.data.shape
    rm = _upsample_rows(h)
    cm = _upsample_rows(w)
    y = np.einsum("ij,cjk,lk->cil", rm, x.data, cm, optimize=True)

    def bw(g):
        _accum(x, np.einsum("ij,cik,kl->cjl", rm, g, cm, optimize=True))

    return _make(y, (x,), bw)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Stack ``(C_j, H, W)`` maps along the channel axis, order preserved."""
    if not xs:
        raise ShapeMismatch("concat_channels of empty list")
    hw = xs[0].data.shape[1:]
    for t in xs:
        if t.data.ndim != 3 or t.data.shape[1:] != hw:
            raise ShapeMismatch(f"concat_channels spatial mismatch: {[t.shape for t in xs]}")
    sizes = [t.data.shape[0] for t in xs]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            _accum(t, g[lo:hi])

    return _make(np.concatenate([t.data for t in xs], axis=0), tuple(xs), bw)


def stop_gradient(x: Tensor) -> Tensor:
    """Identity in value, zero in backward: the result is a constant leaf."""
    return _make(x.data.copy(), (), None)


def embedding(ids: np.ndarray, table: Tensor) -> Tensor:
    """Gather rows of ``table`` ``(V, C)`` by integer ``ids`` ``(T,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or table.data.ndim != 2:
        raise ShapeMismatch(f"embedding ids {ids.shape} table {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeMismatch("embedding id out of vocabulary range")

    def bw(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _make(table.data[ids], (table,), bw)


def cross_entropy_2class(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean pixelwise cross-entropy of ``(2, H, W)`` logits vs a binary mask."""
    if logits.data.ndim != 3 or logits.data.shape[0] != 2:
        raise ShapeMismatch(f"cross_entropy_2class expects (2,H,W), got {logits.shape}")
    target = np.asarray(target)
    if target.shape != logits.data.shape[1:]:
        raise ShapeMismatch(f"target {target.shape} vs logits {logits.shape}")
    t = target.astype(np.int64)
    if t.size and (t.min() < 0 or t.max() > 1):
        raise ShapeMismatch("target mask must be binary")
    z = logits.data - logits.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=0, keepdims=True)
    p = e / s
    logp = z - np.log(s)
    picked = np.take_along_axis(logp, t[None], axis=0)[0]
    n = float(t.size)
    loss = -picked.sum() / n

    def bw(g):
        onehot = (np.arange(2)[:, None, None] == t[None]).astype(np.float64)
        _accum(logits, (p - onehot) * (float(g.reshape(())) / n))

    return _make(np.asarray(loss), (logits,), bw)
