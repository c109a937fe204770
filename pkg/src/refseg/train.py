"""Training driver: vocabulary building, the seeded loop, and exact resume."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import ops
from . import tensor as T
from .config import RunConfig, config_hash, save_config
from .encoders import VisualEncoder, autoencode_pretrain
from .model import RISModel
from .optim import AdamW
from .synth.corpus import Sample, load_manifest
from .text_prompt import TEMPLATES, Vocabulary, tokenize

__all__ = [
    "build_vocab",
    "resolve_guidance",
    "training_step",
    "TrainResult",
    "train",
]


def build_vocab(samples: list[Sample]) -> Vocabulary:
    """Vocabulary over corpus tokens plus every prompt-template word.

    Template words are always included so the embedding table (and hence the
    parameter census) is identical whether or not target prompting is on.
    """
    tokens: set[str] = set()
    for s in samples:
        tokens.update(tokenize(s.expression))
    for template in TEMPLATES.values():
        tokens.update(template)
    return Vocabulary(tokens)


def resolve_guidance(
    source: str,
    cfg: RunConfig,
    samples: list[Sample],
    out_dir: str,
    pretrain_steps: int = 120,
    pretrain_images: int = 32,
) -> str:
    """Turn a bare ``autoenc`` request into a concrete checkpoint reference.

    Pretrains a fresh frozen-twin-to-be by patch autoencoding on the first
    few training images, saves it, and returns ``autoenc:<path>``.  Any other
    source string passes through untouched.
    """
    if source != "autoenc":
        return source
    path = os.path.join(out_dir, "guidance_autoenc.ckpt")
    if not os.path.exists(path):
        enc = VisualEncoder(
            np.random.default_rng(17), cfg.model.base_channels, cfg.model.window_size
        )
        images = [s.load_image() for s in samples[:pretrain_images]]
        autoencode_pretrain(enc, images, steps=pretrain_steps, seed=cfg.train.seed)
        ckpt.save_module(path, enc, meta={"pretrain_steps": pretrain_steps})
    return f"autoenc:{path}"


def _portable_guidance_source(source: str, out_dir: str) -> str:
    """Rewrite a guidance reference under ``out_dir`` to a relative one."""
    if source.startswith("seed:") or source in ("seed", ""):
        return source
    prefix, ref = ("autoenc:", source[8:]) if source.startswith("autoenc:") else ("", source)
    root = os.path.abspath(out_dir)
    ref_abs = os.path.abspath(ref)
    if os.path.commonpath([root, ref_abs]) == root:
        ref = os.path.relpath(ref_abs, root)
    return prefix + ref


def training_step(model: RISModel, optimizer: AdamW, batch: list[Sample]) -> float:
    """One optimizer update on the mean cross-entropy over ``batch``."""
    optimizer.zero_grad()
    total = None
    for sample in batch:
        ids, mask = model.prepare_text(sample.expression)
        logits = model.forward_logits(sample.load_image(), ids, mask)
        loss = ops.cross_entropy_2class(logits, sample.mask())
        total = loss if total is None else T.add(total, loss)
    mean = T.mul_scalar(total, 1.0 / len(batch))
    T.backward(mean)
    optimizer.step()
    return mean.item()


@dataclass
class TrainResult:
    checkpoint_path: str
    optim_path: str
    loss_csv_path: str
    config_path: str
    losses: list[float] = field(default_factory=list)
    start_step: int = 0
    steps: int = 0
    wall_clock: float = 0.0


def _rng_for_sampling(seed: int) -> np.random.Generator:
    # dedicated stream so batch order never aliases weight initialization
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xBA7C4])))


def train(cfg: RunConfig, out_dir: str, resume: bool = False) -> TrainResult:
    """Train per ``cfg`` into ``out_dir`` (checkpoint, optimizer state,
    loss curve CSV, resolved config).  With ``resume=True`` and a previous
    state present, continues bit-exactly from the stored step."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.monotonic()

    samples = load_manifest(cfg.corpus, "train")
    if not samples:
        raise ValueError(f"corpus {cfg.corpus!r} has an empty train split")
    vocab = build_vocab(samples)
    guidance = resolve_guidance(cfg.guidance, cfg, samples, out_dir)

    model = RISModel(
        cfg.model,
        cfg.flags,
        vocab,
        seed=cfg.train.seed,
        guidance_source=guidance,
        template=cfg.train.template,
    )
    optimizer = AdamW(
        model.named_parameters(),
        lr=cfg.optim.lr,
        betas=(cfg.optim.beta1, cfg.optim.beta2),
        eps=cfg.optim.eps,
        weight_decay=cfg.optim.weight_decay,
    )
    rng = _rng_for_sampling(cfg.train.seed)

    model_path = os.path.join(out_dir, "model.ckpt")
    optim_path = os.path.join(out_dir, "optim.ckpt")
    csv_path = os.path.join(out_dir, "loss.csv")
    config_path = os.path.join(out_dir, "config.json")
    save_config(cfg, config_path)

    start_step = 0
    if resume and os.path.exists(optim_path):
        ckpt.load_module(model_path, model)
        entries, meta = ckpt.read_checkpoint(optim_path)
        optimizer.load_state({n: a for n, (a, _) in entries.items()}, meta)
        rng.bit_generator.state = json.loads(meta["rng_state"])
        start_step = int(meta["step"])

    losses: list[float] = []
    mode = "a" if start_step else "w"
    with open(csv_path, mode) as csv:
        if not start_step:
            csv.write("step,loss\n")
        for step in range(start_step, cfg.train.steps):
            idx = rng.integers(0, len(samples), size=cfg.train.batch_size)
            loss = training_step(model, optimizer, [samples[i] for i in idx])
            losses.append(loss)
            csv.write(f"{step + 1},{loss!r}\n")
            if cfg.train.log_every and (step + 1) % cfg.train.log_every == 0:
                print(f"step {step + 1}/{cfg.train.steps}  loss {loss:.4f}", flush=True)

    extra = {
        "step": cfg.train.steps,
        "config_hash": config_hash(cfg),
        "train_corpus_path": os.path.realpath(cfg.corpus),
        # store run-local guidance checkpoints relative to the run dir so the
        # saved model is relocatable (and reruns byte-identical across dirs)
        "guidance_source": _portable_guidance_source(guidance, out_dir),
    }
    model.save(model_path, extra_meta=extra)
    ckpt.write_checkpoint(
        optim_path,
        optimizer.state_entries(),
        meta={
            **optimizer.state_meta(),
            "step": cfg.train.steps,
            "rng_state": json.dumps(rng.bit_generator.state),
        },
    )
    return TrainResult(
        checkpoint_path=model_path,
        optim_path=optim_path,
        loss_csv_path=csv_path,
        config_path=config_path,
        losses=losses,
        start_step=start_step,
        steps=cfg.train.steps,
        wall_clock=time.monotonic() - t0,
    )
