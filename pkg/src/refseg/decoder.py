"""Top-down decoder: fused stage-4 features back to a full-resolution mask.

Each level upsamples the running feature map 2×, concatenates the stage's
fused features (and, when guidance is enabled, a narrow projection of the
stop-gradiented guidance features) and projects through two rounds of
conv3x3 → group norm → relu down to the stage width.  A 2-channel head plus
two more bilinear doublings produces per-pixel foreground/background logits
at image resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from . import tensor as T
from .fusion import FusedFeatures
from .module import Module, ModuleList, glorot
from .tensor import Parameter, ShapeMismatch, Tensor

__all__ = ["GUIDANCE_WIDTH_DIVISOR", "RhoBlock", "Decoder", "MaskPrediction", "predict_mask"]

GUIDANCE_WIDTH_DIVISOR = 8     # W_p emits 1/8 of its input channels


def default_groups(channels: int, groups: int = 8) -> int:
    return channels if channels < groups else groups


def _conv_init(rng, c_out, c_in):
    fan_in = c_in * 9
    fan_out = c_out * 9
    return glorot(rng, (c_out, c_in, 3, 3), fan_in, fan_out)


class RhoBlock(Module):
    """Two rounds of [conv3x3 → group_norm → relu], ending at ``c_out``."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, groups: int = 8):
        g = default_groups(c_out, groups)
        self.conv1_w = Parameter(_conv_init(rng, c_out, c_in))
        self.conv1_b = Parameter(np.zeros(c_out))
        self.gn1_g = Parameter(np.ones(c_out))
        self.gn1_b = Parameter(np.zeros(c_out))
        self.conv2_w = Parameter(_conv_init(rng, c_out, c_out))
        self.conv2_b = Parameter(np.zeros(c_out))
        self.gn2_g = Parameter(np.ones(c_out))
        self.gn2_b = Parameter(np.zeros(c_out))
        self.groups = g

    def forward(self, x: Tensor) -> Tensor:
        x = ops.conv3x3(x, self.conv1_w, self.conv1_b)
        x = T.relu(ops.group_norm(x, self.gn1_g, self.gn1_b, self.groups))
        x = ops.conv3x3(x, self.conv2_w, self.conv2_b)
        return T.relu(ops.group_norm(x, self.gn2_g, self.gn2_b, self.groups))


class Decoder(Module):
    """Runs levels 3→1 and holds the 2-class prediction head."""

    def __init__(self, rng: np.random.Generator, chans: tuple[int, int, int, int],
                 use_visual_guidance: bool, groups: int = 8):
        self.chans = chans
        self.use_visual_guidance = use_visual_guidance
        rhos = []
        wps = []
        for i in (2, 1, 0):        # decoder levels 3, 2, 1
            c_in = chans[i + 1] + chans[i]
            if use_visual_guidance:
                c_in += chans[i] // GUIDANCE_WIDTH_DIVISOR
                w = Parameter(
                    glorot(rng, (chans[i], chans[i] // GUIDANCE_WIDTH_DIVISOR),
                           chans[i], chans[i] // GUIDANCE_WIDTH_DIVISOR)
                )
                b = Parameter(np.zeros(chans[i] // GUIDANCE_WIDTH_DIVISOR))
                wps.append((w, b))
            rhos.append(RhoBlock(rng, c_in, chans[i], groups))
        self.rhos = ModuleList(rhos)
        if use_visual_guidance:
            # registered in level order 3, 2, 1 to mirror self.rhos
            for lvl, (w, b) in zip((3, 2, 1), wps):
                setattr(self, f"wp{lvl}_w", w)
                setattr(self, f"wp{lvl}_b", b)
        self.head_w = Parameter(glorot(rng, (chans[0], 2), chans[0], 2))
        self.head_b = Parameter(np.zeros(2))

    def _project_guidance(self, level: int, p: Tensor) -> Tensor:
        w = getattr(self, f"wp{level}_w")
        b = getattr(self, f"wp{level}_b")
        c, h, wd = p.shape
        toks = T.transpose(T.reshape(p, (c, h * wd)), (1, 0))
        out = ops.linear(toks, w, b)
        return T.reshape(T.transpose(out, (1, 0)), (out.shape[1], h, wd))

    def decode(self, fused: FusedFeatures, guidance: list[Tensor] | None = None) -> Tensor:
        """Top-down pass; returns the stride-4 feature map."""
        if self.use_visual_guidance and guidance is None:
            raise ShapeMismatch("decoder built with guidance inputs but none were given")
        y = fused.v_aggre
        for idx, level in enumerate((3, 2, 1)):
            up = ops.bilinear_upsample_2x(y)
            parts = [up, fused.stages[level - 1]]
            if self.use_visual_guidance:
                p = ops.stop_gradient(guidance[level - 1])
                parts.append(self._project_guidance(level, p))
            y = self.rhos[idx].forward(ops.concat_channels(parts))
        return y

    def head_logits(self, y1: Tensor) -> Tensor:
        """2-channel logits upsampled from stride 4 to image resolution."""
        c, h, w = y1.shape
        toks = T.transpose(T.reshape(y1, (c, h * w)), (1, 0))
        logits = ops.linear(toks, self.head_w, self.head_b)
        logits = T.reshape(T.transpose(logits, (1, 0)), (2, h, w))
        logits = ops.bilinear_upsample_2x(logits)
        return ops.bilinear_upsample_2x(logits)


@dataclass
class MaskPrediction:
    prob: np.ndarray           # (H, W) foreground probability
    mask: np.ndarray           # (H, W) bool, strictly prob > 0.5


def predict_mask(logits: Tensor | np.ndarray) -> MaskPrediction:
    """Softmax over the 2 channels; channel 1 is foreground; ties → background."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if z.ndim != 3 or z.shape[0] != 2:
        raise ShapeMismatch(f"expected (2,H,W) logits, got {z.shape}")
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    prob = e[1] / e.sum(axis=0)
    return MaskPrediction(prob=prob, mask=prob > 0.5)
