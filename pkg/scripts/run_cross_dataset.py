#!/usr/bin/env python3
"""Cross-dataset transfer grid: train one model per corpus, evaluate on all.

Corpus d is eval-only (no train split), so it appears as a column but never
as a row.  In-distribution cells (train corpus == eval corpus) are bracketed
in the rendered table.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from refseg.config import FlagConfig, ModelConfig, OptimConfig, RunConfig
from refseg.protocol import render_grid, run_cross_dataset, save_grid
from refseg.synth.corpus import PROFILES, build_corpus
from refseg.train import train


def ensure_corpus(root: str, name: str, seed: int) -> str:
    out = os.path.join(root, name)
    if not os.path.exists(os.path.join(out, "corpus.json")):
        t0 = time.time()
        build_corpus(name, out, seed=seed)
        print(f"built corpus {name} in {time.time() - t0:.1f}s", flush=True)
    return out


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="cross_dataset")
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--batch-size", type=int, default=4)
    ap.add_argument("--base-channels", type=int, default=16)
    ap.add_argument("--c-text", type=int, default=32)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--weight-decay", type=float, default=1e-2)
    ap.add_argument("--guidance", default="autoenc")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--split", default="test")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--data-seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    corpora = {n: ensure_corpus(args.workdir, n, args.data_seed) for n in PROFILES}
    trainable = [n for n in corpora if any(s == "train" for s, _ in PROFILES[n].splits)]

    checkpoints = {}
    for name in trainable:
        out = os.path.join(args.workdir, f"train_{name}")
        ckpt = os.path.join(out, "model.ckpt")
        if not os.path.exists(ckpt):
            cfg = RunConfig(
                model=ModelConfig(base_channels=args.base_channels, c_text=args.c_text),
                flags=FlagConfig(True, True, True),
                optim=OptimConfig(lr=args.lr, weight_decay=args.weight_decay),
                corpus=corpora[name],
                guidance=args.guidance,
            )
            cfg.train.steps = args.steps
            cfg.train.batch_size = args.batch_size
            cfg.train.seed = args.seed
            cfg.train.log_every = 0
            t0 = time.time()
            result = train(cfg, out)
            print(
                f"trained on {name} in {time.time() - t0:.1f}s "
                f"(final loss {result.losses[-1]:.4f})",
                flush=True,
            )
            ckpt = result.checkpoint_path
        checkpoints[name] = ckpt

    grid = run_cross_dataset(checkpoints, corpora, split=args.split, threads=args.threads)
    save_grid(grid, os.path.join(args.workdir, "grid.json"))
    print()
    print(render_grid(grid))
    return 0


if __name__ == "__main__":
    sys.exit(main())
