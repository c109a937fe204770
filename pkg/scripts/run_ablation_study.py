#!/usr/bin/env python3
"""Flags-ladder ablation: train each rung on corpus A, evaluate zero-shot on B/C.

Reports per-rung mIoU/oIoU means over seeds plus the two directional checks
(prompting should not hurt on the expression-shifted corpus; the full model
should beat the baseline on the domain-shifted corpus).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from refseg.config import ModelConfig, OptimConfig, RunConfig, RUNG_NAMES, rung_flags
from refseg.model import RISModel
from refseg.protocol import evaluate_model
from refseg.synth.corpus import build_corpus, load_manifest
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
    ap.add_argument("--workdir", default="ablation_study")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--batch-size", type=int, default=4)
    ap.add_argument("--base-channels", type=int, default=16)
    ap.add_argument("--c-text", type=int, default=32)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--weight-decay", type=float, default=1e-2)
    ap.add_argument("--guidance", default="autoenc")
    ap.add_argument("--split", default="test")
    ap.add_argument("--eval-limit", type=int, default=0, help="cap eval samples (0 = all)")
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--rungs", default=",".join(RUNG_NAMES))
    args = ap.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    corpus_a = ensure_corpus(args.workdir, "a", args.data_seed)
    eval_dirs = {n: ensure_corpus(args.workdir, n, args.data_seed) for n in ("b", "c")}
    eval_samples = {}
    for n, d in eval_dirs.items():
        s = load_manifest(d, args.split)
        eval_samples[n] = s[: args.eval_limit] if args.eval_limit else s

    seeds = [int(s) for s in args.seeds.split(",")]
    rungs = args.rungs.split(",")
    table: dict[str, dict[str, list[float]]] = {r: {n: [] for n in eval_samples} for r in rungs}

    for seed in seeds:
        for rung in rungs:
            cfg = RunConfig(
                model=ModelConfig(base_channels=args.base_channels, c_text=args.c_text),
                flags=rung_flags(rung),
                optim=OptimConfig(lr=args.lr, weight_decay=args.weight_decay),
                corpus=corpus_a,
                guidance=args.guidance,
            )
            cfg.train.steps = args.steps
            cfg.train.batch_size = args.batch_size
            cfg.train.seed = seed
            cfg.train.log_every = 0
            slug = rung.replace(" ", "").replace("+", "plus_").replace("&", "_")
            out = os.path.join(args.workdir, f"seed{seed}", slug)
            t0 = time.time()
            result = train(cfg, out)
            t_train = time.time() - t0
            model = RISModel.load(result.checkpoint_path)
            line = [f"seed {seed} {rung:10s} train {t_train:6.1f}s loss {result.losses[-1]:.4f}"]
            for n, samples in eval_samples.items():
                report, _ = evaluate_model(model, samples)
                table[rung][n].append(report.miou)
                line.append(f"{n}: mIoU {report.miou:.4f} oIoU {report.oiou:.4f}")
            print("  ".join(line), flush=True)

    print("\nmean mIoU over seeds:")
    means = {r: {n: sum(v) / len(v) for n, v in per.items()} for r, per in table.items()}
    for r in rungs:
        print(f"  {r:10s} " + "  ".join(f"{n}={means[r][n]:.4f}" for n in eval_samples))
    if set(rungs) == set(RUNG_NAMES):
        b_ok = means["baseline"]["b"] <= means["+ TP"]["b"] <= means["+ MFA&VG"]["b"]
        c_gap = means["+ MFA&VG"]["c"] - means["baseline"]["c"]
        print(f"\nB ordering baseline<=+TP<=+MFA&VG: {b_ok}")
        print(f"C gap +MFA&VG - baseline: {c_gap:+.4f} (need >= +0.02)")
    with open(os.path.join(args.workdir, "summary.json"), "w") as f:
        json.dump(
            {"settings": {**vars(args), "seeds": seeds, "rungs": rungs}, "means": means,
             "raw": table},
            f, indent=1, sort_keys=True,
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
