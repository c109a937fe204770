"""Visual pyramid encoder, text encoder, and the frozen guidance encoder.

The visual encoder is a 4-stage hierarchy: each stage reduces resolution with
a strided space-to-depth merge + linear projection and then applies two
windowed self-attention blocks (second one shifted).  Stage 1 additionally
injects two normalized coordinate channels so locational expressions can be
grounded at any input size.  Channels double per stage: C, 2C, 4C, 8C at
strides 4, 8, 16, 32.
"""

from __future__ import annotations

import numpy as np

from . import ops
from . import tensor as T
from .checkpoint import load_module
from .fusion import WindowAttentionBlock, window_self_attention
from .module import Module, ModuleList, glorot, normal_init
from .tensor import Parameter, Tensor

__all__ = [
    "BadImageSize",
    "STRIDES",
    "stage_channels",
    "stage_heads",
    "VisualEncoder",
    "TextEncoder",
    "make_guidance_encoder",
    "autoencode_pretrain",
]

STRIDES = (4, 8, 16, 32)


def stage_channels(base: int) -> tuple[int, int, int, int]:
    return (base, 2 * base, 4 * base, 8 * base)


def stage_heads(base: int) -> tuple[int, int, int, int]:
    return tuple(max(1, c // 16) for c in stage_channels(base))


class BadImageSize(ValueError):
    """Input spatial size is not a positive multiple of 32."""


def _space_to_depth(x: Tensor, stride: int) -> Tensor:
    c, h, w = x.shape
    t = T.reshape(x, (c, h // stride, stride, w // stride, stride))
    t = T.transpose(t, (0, 2, 4, 1, 3))
    return T.reshape(t, (c * stride * stride, h // stride, w // stride))


def _pixelwise_linear(x: Tensor, w: Parameter, b: Parameter) -> Tensor:
    c, h, wd = x.shape
    toks = T.transpose(T.reshape(x, (c, h * wd)), (1, 0))
    out = ops.linear(toks, w, b)
    return T.reshape(T.transpose(out, (1, 0)), (out.shape[1], h, wd))


def _coord_channels(h: int, w: int) -> np.ndarray:
    ys = (np.arange(h) + 0.5) / h * 2.0 - 1.0
    xs = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    grid_y = np.repeat(ys[:, None], w, axis=1)
    grid_x = np.repeat(xs[None, :], h, axis=0)
    return np.stack([grid_x, grid_y])


class _Stage(Module):
    def __init__(self, rng, c_in: int, c_out: int, stride: int, heads: int,
                 window_size: int, with_coords: bool):
        self.stride = stride
        self.with_coords = with_coords
        merged = c_in * stride * stride + (2 if with_coords else 0)
        self.merge_w = Parameter(glorot(rng, (merged, c_out), merged, c_out))
        self.merge_b = Parameter(np.zeros(c_out))
        tokens = window_size * window_size
        self.block1 = WindowAttentionBlock(rng, c_out, heads, tokens)
        self.block2 = WindowAttentionBlock(rng, c_out, heads, tokens)

    def forward(self, x: Tensor) -> Tensor:
        x = _space_to_depth(x, self.stride)
        if self.with_coords:
            _, h, w = x.shape
            x = ops.concat_channels([x, Tensor(_coord_channels(h, w))])
        x = _pixelwise_linear(x, self.merge_w, self.merge_b)
        x = window_self_attention(x, self.block1, shift=False)
        return window_self_attention(x, self.block2, shift=True)


class VisualEncoder(Module):
    """Image (3, H, W) → four feature maps at strides 4/8/16/32."""

    def __init__(self, rng: np.random.Generator, base_channels: int = 32,
                 window_size: int = 5):
        chans = stage_channels(base_channels)
        heads = stage_heads(base_channels)
        self.base_channels = base_channels
        self.window_size = window_size
        stages = [
            _Stage(rng, 3, chans[0], 4, heads[0], window_size, with_coords=True)
        ]
        for i in range(1, 4):
            stages.append(
                _Stage(rng, chans[i - 1], chans[i], 2, heads[i], window_size, with_coords=False)
            )
        self.stages = ModuleList(stages)

    def forward(self, image: Tensor) -> list[Tensor]:
        if image.ndim != 3 or image.shape[0] != 3:
            raise BadImageSize(f"expected (3, H, W), got {image.shape}")
        _, h, w = image.shape
        if h <= 0 or w <= 0 or h % 32 or w % 32:
            raise BadImageSize(f"spatial size {h}x{w} is not a positive multiple of 32")
        feats = []
        x = image
        for stage in self.stages:
            x = stage.forward(x)
            feats.append(x)
        return feats


class TextEncoder(Module):
    """Token ids + validity mask → features (C_t, T).

    Embedding table + learned absolute position embeddings + two pre-norm
    attention blocks whose keys exclude padded positions.
    """

    def __init__(self, rng: np.random.Generator, vocab_size: int,
                 c_text: int = 64, max_len: int = 24, heads: int = 4,
                 n_blocks: int = 2):
        self.c_text = c_text
        self.max_len = max_len
        self.embed = Parameter(normal_init(rng, (vocab_size, c_text), std=0.05))
        self.pos = Parameter(normal_init(rng, (max_len, c_text), std=0.05))
        self.blocks = ModuleList(
            [WindowAttentionBlock(rng, c_text, heads, max_len) for _ in range(n_blocks)]
        )

    def forward(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask).astype(bool)
        if ids.shape != (self.max_len,) or mask.shape != (self.max_len,):
            raise T.ShapeMismatch(
                f"ids {ids.shape} / mask {mask.shape}; encoder expects length {self.max_len}"
            )
        x = T.add(ops.embedding(ids, self.embed), self.pos)
        x = T.reshape(x, (1, self.max_len, self.c_text))
        key_invalid = (~mask)[None, :]
        for block in self.blocks:
            x = block.attend(x, key_invalid=key_invalid)
        return T.transpose(T.reshape(x, (self.max_len, self.c_text)), (1, 0))


def make_guidance_encoder(
    source: str,
    base_channels: int,
    window_size: int,
    default_seed: int = 17,
) -> VisualEncoder:
    """Frozen topology twin of the visual encoder.

    ``source`` is ``seed:N`` (fresh weights from seed N), a checkpoint path,
    or ``autoenc`` / ``autoenc:<path>`` (weights produced by
    :func:`autoencode_pretrain`, loaded from the given checkpoint).
    """
    if source.startswith("seed:"):
        seed = int(source.split(":", 1)[1])
        enc = VisualEncoder(np.random.default_rng(seed), base_channels, window_size)
    elif source == "seed" or source == "":
        enc = VisualEncoder(np.random.default_rng(default_seed), base_channels, window_size)
    elif source == "autoenc":
        raise ValueError(
            "bare 'autoenc' must be resolved by the training driver to 'autoenc:<checkpoint>'"
        )
    elif source.startswith("autoenc:"):
        enc = VisualEncoder(np.random.default_rng(default_seed), base_channels, window_size)
        load_module(source.split(":", 1)[1], enc)
    else:
        enc = VisualEncoder(np.random.default_rng(default_seed), base_channels, window_size)
        load_module(source, enc)
    enc.freeze()
    return enc


def autoencode_pretrain(
    encoder: VisualEncoder,
    images: list[np.ndarray],
    steps: int = 150,
    lr: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Tune an encoder by image reconstruction from its stride-4 features.

    A throwaway linear head maps stage-1 features back to 4×4 RGB patches;
    the mean squared reconstruction error trains head and encoder jointly.
    Returns the loss curve; the caller freezes and saves the encoder.
    """
    from .optim import AdamW

    rng = np.random.default_rng(seed)
    c1 = stage_channels(encoder.base_channels)[0]
    head_w = Parameter(glorot(rng, (c1, 48), c1, 48), name="head.w")
    head_b = Parameter(np.zeros(48), name="head.b")
    named = list(encoder.named_parameters()) + [("head.w", head_w), ("head.b", head_b)]
    opt = AdamW(named, lr=lr, weight_decay=0.0)
    losses = []
    for step in range(steps):
        img = images[int(rng.integers(len(images)))]
        x = Tensor(np.asarray(img, dtype=np.float64))
        v1 = encoder.stages[0].forward(x)
        _, h4, w4 = v1.shape
        toks = T.transpose(T.reshape(v1, (c1, h4 * w4)), (1, 0))
        rec = ops.linear(toks, head_w, head_b)
        tgt = _space_to_depth(Tensor(x.data), 4)
        tgt_toks = T.transpose(T.reshape(tgt, (48, h4 * w4)), (1, 0))
        loss = T.mean_all(T.square(T.sub(rec, tgt_toks)))
        opt.zero_grad()
        T.backward(loss)
        opt.step()
        losses.append(loss.item())
    return losses
