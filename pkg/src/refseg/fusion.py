"""Cross-modal fusion: windowed self-attention, pixel-word attention, and the
final-stage aggregation over concatenated fused + guidance features.

Feature maps are ``(C, H, W)``; token matrices inside attention are
``(n_groups, tokens, C)``.  Attention masking is additive (-1e9 before the
softmax), which zeroes masked weights exactly in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from . import tensor as T
from .module import Module, glorot
from .tensor import Parameter, ShapeMismatch, Tensor

__all__ = [
    "NEG_MASK",
    "WindowAttentionBlock",
    "window_self_attention",
    "PixelWordAttentionModule",
    "PixelWordAttention",
    "pixel_word_attention",
    "MFAModule",
    "mfa_aggregate",
    "FusedFeatures",
    "fuse_all_stages",
]

NEG_MASK = -1e9


def _linear_params(rng, c_in, c_out, prefix):
    w = Parameter(glorot(rng, (c_in, c_out), c_in, c_out), name=f"{prefix}.w")
    b = Parameter(np.zeros(c_out), name=f"{prefix}.b")
    return w, b


class WindowAttentionBlock(Module):
    """Pre-norm transformer block with multi-head attention over token groups.

    Groups are attention-independent (windows of a feature map, or a single
    group holding a whole text sequence).  A learned additive bias table is
    shared across groups — for windows this is the per-window position bias.
    """

    def __init__(self, rng: np.random.Generator, channels: int, heads: int,
                 tokens: int, mlp_ratio: int = 2):
        if channels % heads != 0:
            raise ShapeMismatch(f"channels {channels} not divisible by heads {heads}")
        self.channels = channels
        self.heads = heads
        self.tokens = tokens
        self.head_dim = channels // heads
        self.ln1_g = Parameter(np.ones(channels))
        self.ln1_b = Parameter(np.zeros(channels))
        self.wq, self.bq = _linear_params(rng, channels, channels, "q")
        self.wk, self.bk = _linear_params(rng, channels, channels, "k")
        self.wv, self.bv = _linear_params(rng, channels, channels, "v")
        self.wo, self.bo = _linear_params(rng, channels, channels, "o")
        self.bias = Parameter(np.zeros((heads, tokens, tokens)))
        self.ln2_g = Parameter(np.ones(channels))
        self.ln2_b = Parameter(np.zeros(channels))
        hidden = mlp_ratio * channels
        self.w1, self.b1 = _linear_params(rng, channels, hidden, "mlp1")
        self.w2, self.b2 = _linear_params(rng, hidden, channels, "mlp2")

    def _split_heads(self, x: Tensor, n: int, t: int) -> Tensor:
        x = T.reshape(x, (n, t, self.heads, self.head_dim))
        return T.transpose(x, (0, 2, 1, 3))

    def attend(self, tokens: Tensor, key_invalid: np.ndarray | None = None) -> Tensor:
        """``tokens`` is (n_groups, t, C); ``key_invalid`` a boolean (n_groups, t)."""
        n, t, c = tokens.shape
        if t != self.tokens or c != self.channels:
            raise ShapeMismatch(f"block built for ({self.tokens},{self.channels}), got ({t},{c})")
        h = ops.layer_norm(tokens, self.ln1_g, self.ln1_b)
        q = self._split_heads(ops.linear(h, self.wq, self.bq), n, t)
        k = self._split_heads(ops.linear(h, self.wk, self.bk), n, t)
        v = self._split_heads(ops.linear(h, self.wv, self.bv), n, t)
        logits = T.matmul(q, T.transpose(k, (0, 1, 3, 2)))
        logits = T.mul_scalar(logits, 1.0 / np.sqrt(self.head_dim))
        logits = T.add(logits, T.tile_leading(self.bias, n))
        if key_invalid is not None and key_invalid.any():
            add = np.where(key_invalid[:, None, None, :], NEG_MASK, 0.0)
            add = np.broadcast_to(add, (n, self.heads, t, t)).copy()
            logits = T.add(logits, Tensor(add))
        attn = ops.softmax(logits, axis=-1)
        out = T.matmul(attn, v)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (n, t, c))
        out = ops.linear(out, self.wo, self.bo)
        x = T.add(tokens, out)
        h2 = ops.layer_norm(x, self.ln2_g, self.ln2_b)
        m = ops.linear(T.relu(ops.linear(h2, self.w1, self.b1)), self.w2, self.b2)
        return T.add(x, m)


def _partition(x: Tensor, ws: int) -> tuple[Tensor, int, int]:
    """(C, H, W) with H, W multiples of ws → (n_windows, ws², C)."""
    c, h, w = x.shape
    nh, nw = h // ws, w // ws
    t = T.reshape(x, (c, nh, ws, nw, ws))
    t = T.transpose(t, (1, 3, 2, 4, 0))
    return T.reshape(t, (nh * nw, ws * ws, c)), nh, nw


def _unpartition(win: Tensor, nh: int, nw: int, ws: int) -> Tensor:
    n, tt, c = win.shape
    t = T.reshape(win, (nh, nw, ws, ws, c))
    t = T.transpose(t, (4, 0, 2, 1, 3))
    return T.reshape(t, (c, nh * ws, nw * ws))


def window_self_attention(x: Tensor, block: WindowAttentionBlock, shift: bool = False) -> Tensor:
    """Apply ``block`` within non-overlapping windows of ``x`` (C, H, W).

    The map is zero-padded to a window multiple (shifted windows pad an extra
    ``ws // 2`` on top/left); padded positions are masked out of the key set
    and cropped away afterwards.
    """
    c, h, w = x.shape
    ws = int(np.sqrt(block.tokens))
    if ws * ws != block.tokens:
        raise ShapeMismatch(f"block token count {block.tokens} is not a square window")
    off = ws // 2 if shift else 0
    h2 = -(-(h + off) // ws) * ws
    w2 = -(-(w + off) // ws) * ws
    bot, rgt = h2 - h - off, w2 - w - off
    xp = T.pad2d(x, off, bot, off, rgt)
    valid = np.zeros((h2, w2), dtype=bool)
    valid[off : off + h, off : off + w] = True

    win, nh, nw = _partition(xp, ws)
    key_invalid = ~valid.reshape(nh, ws, nw, ws).transpose(0, 2, 1, 3).reshape(nh * nw, ws * ws)
    out = block.attend(win, key_invalid=key_invalid)
    back = _unpartition(out, nh, nw, ws)
    return T.crop2d(back, off, bot, off, rgt)


@dataclass
class PixelWordAttention:
    """Post-softmax weights (H·W × T) and the attention-aggregated text map."""

    weights: Tensor
    textmap: Tensor


class PixelWordAttentionModule(Module):
    """Per-stage cross-modal alignment.

    Pixels query text tokens: weights = softmax over tokens of the scaled
    product of projected pixels and projected words; the weighted sum of
    value-projected words forms a per-pixel text map that gates a projection
    of the visual features elementwise.
    """

    def __init__(self, rng: np.random.Generator, c_vis: int, c_text: int):
        self.c_vis = c_vis
        self.w_iv, self.b_iv = _linear_params(rng, c_vis, c_vis, "iv")
        self.w_t, self.b_t = _linear_params(rng, c_text, c_vis, "t")
        self.w_tv, self.b_tv = _linear_params(rng, c_text, c_vis, "tv")
        self.w_im, self.b_im = _linear_params(rng, c_vis, c_vis, "im")

    def project_visual(self, v: Tensor) -> Tensor:
        """The elementwise-gated branch: per-pixel linear map of the features."""
        c, h, w = v.shape
        toks = T.transpose(T.reshape(v, (c, h * w)), (1, 0))
        out = ops.linear(toks, self.w_im, self.b_im)
        return T.reshape(T.transpose(out, (1, 0)), (c, h, w))

    def attend_text(self, v: Tensor, f_t: Tensor, mask: np.ndarray) -> PixelWordAttention:
        c, h, w = v.shape
        c_t, t_len = f_t.shape
        mask = np.asarray(mask).astype(bool)
        if mask.shape != (t_len,):
            raise ShapeMismatch(f"mask {mask.shape} for T={t_len}")
        if not mask.any():
            raise ShapeMismatch("all text tokens masked")
        pix = T.transpose(T.reshape(v, (c, h * w)), (1, 0))
        words = T.transpose(f_t, (1, 0))
        q = ops.linear(pix, self.w_iv, self.b_iv)
        k = ops.linear(words, self.w_t, self.b_t)
        logits = T.mul_scalar(T.matmul(q, T.transpose(k, (1, 0))), 1.0 / np.sqrt(c))
        if not mask.all():
            add = np.where(mask[None, :], 0.0, NEG_MASK)
            logits = T.add(logits, Tensor(np.broadcast_to(add, (h * w, t_len)).copy()))
        weights = ops.softmax(logits, axis=-1)
        val = ops.linear(words, self.w_tv, self.b_tv)
        g = T.matmul(weights, val)
        g = T.reshape(T.transpose(g, (1, 0)), (c, h, w))
        return PixelWordAttention(weights=weights, textmap=g)

    def forward(self, v: Tensor, f_t: Tensor, mask: np.ndarray) -> tuple[PixelWordAttention, Tensor]:
        pwa = self.attend_text(v, f_t, mask)
        return pwa, T.mul(pwa.textmap, self.project_visual(v))


def pixel_word_attention(
    module: PixelWordAttentionModule, v: Tensor, f_t: Tensor, mask: np.ndarray
) -> tuple[PixelWordAttention, Tensor]:
    return module.forward(v, f_t, mask)


class MFAModule(Module):
    """Final-stage aggregation: the fused text map concatenated with projected
    guidance features runs through two windowed blocks (second shifted), is
    projected back to the stage width, and gates the visual projection."""

    def __init__(self, rng: np.random.Generator, c_stage: int, heads: int, window_size: int):
        self.c_stage = c_stage
        self.window_size = window_size
        self.w_g, self.b_g = _linear_params(rng, c_stage, c_stage, "g")
        wide = 2 * c_stage
        self.block1 = WindowAttentionBlock(rng, wide, heads, window_size * window_size)
        self.block2 = WindowAttentionBlock(rng, wide, heads, window_size * window_size)
        self.w_out, self.b_out = _linear_params(rng, wide, c_stage, "out")

    def _pixelwise(self, x: Tensor, w: Parameter, b: Parameter) -> Tensor:
        c, h, wd = x.shape
        toks = T.transpose(T.reshape(x, (c, h * wd)), (1, 0))
        out = ops.linear(toks, w, b)
        return T.reshape(T.transpose(out, (1, 0)), (out.shape[1], h, wd))

    def forward(self, textmap: Tensor, guidance: Tensor, pwam: PixelWordAttentionModule,
                v: Tensor) -> Tensor:
        if guidance.shape != v.shape:
            raise ShapeMismatch(f"guidance {guidance.shape} vs visual {v.shape}")
        gp = self._pixelwise(guidance, self.w_g, self.b_g)
        cat = ops.concat_channels([textmap, gp])
        h = window_self_attention(cat, self.block1, shift=False)
        h = window_self_attention(h, self.block2, shift=True)
        h = self._pixelwise(h, self.w_out, self.b_out)
        return T.mul(h, pwam.project_visual(v))


def mfa_aggregate(
    mfa: MFAModule, pwa: PixelWordAttention, p4: Tensor,
    pwam4: PixelWordAttentionModule, v4: Tensor,
) -> Tensor:
    return mfa.forward(pwa.textmap, p4, pwam4, v4)


@dataclass
class FusedFeatures:
    stages: list[Tensor]       # V_i' for i = 1..4
    v_aggre: Tensor            # stage-4 aggregate (equals stages[3] without MFA)


def fuse_all_stages(
    pyramid: list[Tensor],
    f_t: Tensor,
    mask: np.ndarray,
    pwams: list[PixelWordAttentionModule],
    mfa: MFAModule | None = None,
    guidance_p4: Tensor | None = None,
) -> FusedFeatures:
    """Per-stage cross-modal fusion; the final stage optionally aggregates."""
    if len(pyramid) != len(pwams):
        raise ShapeMismatch(f"{len(pyramid)} stages vs {len(pwams)} fusion modules")
    stages = []
    last_pwa = None
    for v, pwam in zip(pyramid, pwams):
        pwa, v_fused = pwam.forward(v, f_t, mask)
        stages.append(v_fused)
        last_pwa = pwa
    if mfa is None:
        v_aggre = stages[-1]
    else:
        if guidance_p4 is None:
            raise ShapeMismatch("aggregation requires stage-4 guidance features")
        v_aggre = mfa_aggregate(mfa, last_pwa, guidance_p4, pwams[-1], pyramid[-1])
    return FusedFeatures(stages=stages, v_aggre=v_aggre)
