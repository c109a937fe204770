"""Full referring-segmentation model: encoders + fusion + decoder.

Three config flags select the ablation rungs: ``use_target_prompt`` switches
the text path from the raw expression to its prompted form, ``use_mfa``
enables the final-stage aggregation, ``use_visual_guidance`` feeds projected
frozen-encoder features into the decoder.  The frozen guidance twin is built
only when a flag needs it, runs outside the autodiff tape, and is excluded
from the model's parameter tree (its provenance lives in the checkpoint
metadata instead) — so the all-flags-off census is exactly the baseline's.
"""

from __future__ import annotations

import os

import numpy as np

from . import checkpoint as ckpt
from . import ops
from . import tensor as T
from .config import ModelConfig, FlagConfig
from .decoder import Decoder, MaskPrediction, predict_mask
from .encoders import (
    TextEncoder,
    VisualEncoder,
    make_guidance_encoder,
    stage_channels,
    stage_heads,
)
from .fusion import FusedFeatures, MFAModule, PixelWordAttentionModule, fuse_all_stages, mfa_aggregate
from .module import Module, ModuleList
from .tensor import Tensor
from .text_prompt import (
    TEMPLATES,
    Expression,
    Vocabulary,
    build_prompted_expression,
    encode_tokens,
)

__all__ = ["RISModel"]


class RISModel(Module):
    def __init__(
        self,
        cfg: ModelConfig,
        flags: FlagConfig,
        vocab: Vocabulary,
        seed: int = 0,
        guidance_source: str = "seed:17",
        template: str = "manual",
    ):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.flags = flags
        self.template_name = template
        self.guidance_source = guidance_source
        self.seed = seed
        self._vocab = vocab
        chans = stage_channels(cfg.base_channels)
        heads = stage_heads(cfg.base_channels)

        self.visual = VisualEncoder(rng, cfg.base_channels, cfg.window_size)
        self.text = TextEncoder(
            rng, len(vocab), cfg.c_text, cfg.max_len, cfg.text_heads, cfg.text_blocks
        )
        self.pwams = ModuleList(
            [PixelWordAttentionModule(rng, c, cfg.c_text) for c in chans]
        )
        if flags.use_mfa:
            self.mfa = MFAModule(rng, chans[3], heads[3], cfg.window_size)
        self.decoder = Decoder(rng, chans, flags.use_visual_guidance, cfg.groups)

        self._needs_guidance = flags.use_mfa or flags.use_visual_guidance
        self._guidance = (
            make_guidance_encoder(guidance_source, cfg.base_channels, cfg.window_size)
            if self._needs_guidance
            else None
        )
        # code-path telemetry for the baseline-reduction check
        self.counters = {"mfa": 0, "guidance": 0}

    # -- text path ----------------------------------------------------------

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    def prepare_text(self, expression: str) -> tuple[np.ndarray, np.ndarray]:
        """Expression string → (ids, mask), prompted iff the flag is on."""
        expr = Expression.parse(expression)
        if self.flags.use_target_prompt:
            tokens = build_prompted_expression(expr, TEMPLATES[self.template_name]).full_tokens
        else:
            tokens = expr.tokens
        ids, mask = encode_tokens(tokens, self._vocab, self.cfg.max_len)
        return np.array(ids, dtype=np.int64), np.array(mask, dtype=np.int64)

    # -- forward ------------------------------------------------------------

    def _guidance_pyramid(self, image_data: np.ndarray) -> list[Tensor]:
        self.counters["guidance"] += 1
        with T.no_grad():
            return self._guidance.forward(Tensor(image_data))

    def forward_logits(self, image: np.ndarray, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        """(2, H, W) foreground/background logits at image resolution."""
        img = Tensor(np.asarray(image, dtype=np.float64))
        pyramid = self.visual.forward(img)
        f_t = self.text.forward(ids, mask)

        guidance = self._guidance_pyramid(img.data) if self._needs_guidance else None
        mfa = getattr(self, "mfa", None)
        if mfa is not None:
            self.counters["mfa"] += 1
        fused = fuse_all_stages(
            pyramid, f_t, mask, list(self.pwams),
            mfa=mfa, guidance_p4=guidance[3] if mfa is not None else None,
        )
        y1 = self.decoder.decode(
            fused, guidance[:3] if self.flags.use_visual_guidance else None
        )
        return self.decoder.head_logits(y1)

    def predict(self, image: np.ndarray, expression: str) -> MaskPrediction:
        ids, mask = self.prepare_text(expression)
        with T.no_grad():
            logits = self.forward_logits(image, ids, mask)
        return predict_mask(logits)

    # -- persistence --------------------------------------------------------

    def meta(self) -> dict:
        return {
            "base_channels": self.cfg.base_channels,
            "c_text": self.cfg.c_text,
            "window_size": self.cfg.window_size,
            "max_len": self.cfg.max_len,
            "text_blocks": self.cfg.text_blocks,
            "text_heads": self.cfg.text_heads,
            "groups": self.cfg.groups,
            "use_target_prompt": self.flags.use_target_prompt,
            "use_mfa": self.flags.use_mfa,
            "use_visual_guidance": self.flags.use_visual_guidance,
            "guidance_source": self.guidance_source,
            "template": self.template_name,
            "seed": self.seed,
            "vocab": self._vocab.to_json(),
        }

    def save(self, path: str, extra_meta: dict | None = None) -> None:
        meta = self.meta()
        if extra_meta:
            meta.update(extra_meta)
        ckpt.save_module(path, self, meta=meta)

    @staticmethod
    def _resolve_guidance_source(source: str, ckpt_dir: str) -> str:
        """Relative checkpoint references are anchored at the model checkpoint's
        directory, so run folders stay relocatable."""
        if source.startswith("seed:") or source in ("seed", ""):
            return source
        prefix, ref = ("autoenc:", source[8:]) if source.startswith("autoenc:") else ("", source)
        if ref and not os.path.isabs(ref):
            ref = os.path.join(ckpt_dir, ref)
        return prefix + ref

    @classmethod
    def load(cls, path: str) -> "RISModel":
        loaded, meta = ckpt.read_checkpoint(path)
        cfg = ModelConfig(
            base_channels=meta["base_channels"], c_text=meta["c_text"],
            window_size=meta["window_size"], max_len=meta["max_len"],
            text_blocks=meta["text_blocks"], text_heads=meta["text_heads"],
            groups=meta["groups"],
        )
        flags = FlagConfig(
            use_target_prompt=meta["use_target_prompt"],
            use_mfa=meta["use_mfa"],
            use_visual_guidance=meta["use_visual_guidance"],
        )
        source = cls._resolve_guidance_source(
            meta["guidance_source"], os.path.dirname(os.path.abspath(path))
        )
        model = cls(
            cfg, flags, Vocabulary.from_json(meta["vocab"]), seed=meta.get("seed", 0),
            guidance_source=source, template=meta["template"],
        )
        ckpt.load_module(path, model)
        return model
