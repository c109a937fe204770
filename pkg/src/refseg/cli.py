"""Command-line entry point: gen-data, train, eval, cross-eval, ablation, parse-expr."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .config import (
    RUNG_NAMES,
    ConfigError,
    RunConfig,
    config_hash,
    from_flat,
    load_config,
    rung_flags,
    to_flat,
)
from .metrics import render_report
from .model import RISModel
from .protocol import ablation_run, evaluate_model, render_grid, run_cross_dataset, save_grid
from .synth.corpus import PROFILES, build_corpus, load_manifest
from .synth.ppm import write_pbm
from .synth.rle import rle_encode
from .text_prompt import (
    TEMPLATES,
    Expression,
    build_prompted_expression,
    extract_target_noun,
)
from .train import train

__all__ = ["main"]


def _workdir_path(workdir: str, p: str) -> str:
    return p if os.path.isabs(p) else os.path.join(workdir, p)


def _load_run_config(args) -> RunConfig:
    """File config < --set overrides < RIS_SEED, validated at the end."""
    if getattr(args, "config", None):
        cfg = load_config(_workdir_path(args.workdir, args.config))
    else:
        cfg = RunConfig()
    flat = to_flat(cfg)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            flat[key] = json.loads(raw)
        except json.JSONDecodeError:
            flat[key] = raw
    if getattr(args, "corpus", None):
        flat["corpus"] = args.corpus
    if getattr(args, "guidance", None):
        flat["guidance"] = args.guidance
    seed_env = os.environ.get("RIS_SEED")
    if seed_env is not None:
        flat["train.seed"] = int(seed_env)
    if getattr(args, "seed", None) is not None:
        flat["train.seed"] = args.seed
    cfg = from_flat(flat)
    cfg.corpus = _workdir_path(args.workdir, cfg.corpus) if cfg.corpus else cfg.corpus
    return cfg


def _parse_named_paths(spec: str, workdir: str, filename: str | None = None) -> dict[str, str]:
    """``name=path,...`` pairs, or bare names resolved under the workdir.

    With ``filename`` set, a path that is a directory resolves to
    ``<path>/<filename>`` (so ``--checkpoints runs/a,runs/b`` finds each run's
    model checkpoint).
    """
    out: dict[str, str] = {}
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            name, path = os.path.basename(item.rstrip("/")), item
        path = _workdir_path(workdir, path)
        if filename and os.path.isdir(path):
            path = os.path.join(path, filename)
        out[name] = path
    return out


# -- subcommands -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    seed = int(os.environ.get("RIS_SEED", args.seed))
    profiles = list(PROFILES) if args.profile == "all" else [args.profile]
    for name in profiles:
        out_dir = _workdir_path(args.workdir, os.path.join(args.out, name))
        manifest = build_corpus(name, out_dir, seed=seed)
        print(f"corpus {name}: {manifest.splits} -> {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if not cfg.corpus:
        raise ConfigError("train: no corpus given (corpus key or --corpus)")
    if not os.path.exists(os.path.join(cfg.corpus, "corpus.json")):
        raise FileNotFoundError(f"corpus not found: {cfg.corpus}")
    out_dir = _workdir_path(args.workdir, args.out)
    result = train(cfg, out_dir, resume=args.resume)
    record = {
        "config_hash": config_hash(cfg),
        "checkpoint": result.checkpoint_path,
        "loss_csv": result.loss_csv_path,
        "config": result.config_path,
        "steps": result.steps,
        "final_loss": result.losses[-1] if result.losses else None,
        "wall_clock_s": round(result.wall_clock, 3),
    }
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(record, f, indent=1, sort_keys=True)
        f.write("\n")
    print(json.dumps(record, indent=1, sort_keys=True))
    return 0


def _dump_predictions(model: RISModel, samples, results, dump_dir: str) -> None:
    os.makedirs(dump_dir, exist_ok=True)
    with open(os.path.join(dump_dir, "predictions.jsonl"), "w") as f:
        for res, sample in zip(results, samples):
            pred = model.predict(sample.load_image(), sample.expression)
            name = f"pred_{res.sample_id:06d}.pbm"
            write_pbm(os.path.join(dump_dir, name), pred.mask)
            f.write(json.dumps({
                "sample_id": res.sample_id,
                "mask_path": name,
                "rle": rle_encode(pred.mask),
                "iou": res.iou,
            }) + "\n")


def cmd_eval(args) -> int:
    ckpt_path = _workdir_path(args.workdir, args.checkpoint)
    if os.path.isdir(ckpt_path):
        ckpt_path = os.path.join(ckpt_path, "model.ckpt")
    model = RISModel.load(ckpt_path)
    samples = load_manifest(_workdir_path(args.workdir, args.corpus), args.split)
    report, results = evaluate_model(model, samples, threads=args.threads)
    out = _workdir_path(args.workdir, args.out)
    with open(out, "w") as f:
        json.dump(report.to_json(), f, indent=1, sort_keys=True)
        f.write("\n")
    with open(os.path.splitext(out)[0] + ".txt", "w") as f:
        f.write(render_report(report) + "\n")
    if args.dump:
        _dump_predictions(model, samples, results, _workdir_path(args.workdir, args.dump))
    print(render_report(report))
    return 0


def cmd_cross_eval(args) -> int:
    checkpoints = _parse_named_paths(args.checkpoints, args.workdir, filename="model.ckpt")
    corpora = _parse_named_paths(args.corpora, args.workdir)
    grid = run_cross_dataset(checkpoints, corpora, split=args.split, threads=args.threads)
    save_grid(grid, _workdir_path(args.workdir, args.out))
    print(render_grid(grid))
    return 0


def cmd_ablation(args) -> int:
    base = _load_run_config(args)
    if not base.corpus:
        raise ConfigError("ablation: no corpus given (corpus key or --corpus)")
    out_root = _workdir_path(args.workdir, args.out)
    eval_corpora = _parse_named_paths(args.eval_corpora, args.workdir)

    def train_rung(rung: str) -> str:
        cfg = dataclasses.replace(base, flags=rung_flags(rung))
        slug = rung.replace(" ", "").replace("+", "plus_").replace("&", "_")
        result = train(cfg, os.path.join(out_root, slug))
        return result.checkpoint_path

    table = ablation_run(
        train_rung, RUNG_NAMES, eval_corpora, split=args.split, threads=args.threads
    )
    path = os.path.join(out_root, "ablation.json")
    with open(path, "w") as f:
        json.dump(table, f, indent=1, sort_keys=True)
        f.write("\n")
    for rung in table["rungs"]:
        for corpus, cell in table["results"][rung].items():
            print(
                f"{rung:10s} on {corpus}: oIoU {cell['oiou']:.4f}  mIoU {cell['miou']:.4f}"
                f"  P@0.5 {cell['prec']['0.5']:.3f}  P@0.9 {cell['prec']['0.9']:.3f}"
            )
    print(f"table -> {path}")
    return 0


def cmd_parse_expr(args) -> int:
    expr = Expression.parse(args.expression)
    target = extract_target_noun(expr)
    prompted = build_prompted_expression(expr, TEMPLATES[args.template])
    payload = {
        "tokens": list(expr.tokens),
        "target_noun": target.token,
        "target_index": target.source_index,
        "prompted": list(prompted.full_tokens),
    }
    if args.json:
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        print(f"tokens : {' '.join(payload['tokens'])}")
        print(f"target : {payload['target_noun']} (index {payload['target_index']})")
        print(f"prompted: {' '.join(payload['prompted'])}")
    return 0


# -- argument wiring ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refseg",
        description="Referring-expression segmentation: data, training, evaluation.",
    )
    parser.add_argument("--workdir", default=".", help="base for all relative paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--profile", required=True, choices=[*PROFILES, "all"])
    p.add_argument("--out", default="data")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--config", help="flat dotted-key JSON config file")
    p.add_argument("--corpus", help="corpus directory (overrides config)")
    p.add_argument("--guidance", help="guidance source (overrides config)")
    p.add_argument("--out", default="run")
    p.add_argument("--seed", type=int, help="overrides config seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a flat config key (repeatable)")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", default="report.json")
    p.add_argument("--dump", help="directory for predicted masks (PBM + RLE)")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("cross-eval", help="checkpoint × corpus evaluation grid")
    p.add_argument("--checkpoints", required=True,
                   help="name=path pairs or run dirs, comma-separated")
    p.add_argument("--corpora", required=True,
                   help="name=dir pairs or corpus dirs, comma-separated")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", default="grid.json")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_cross_eval)

    p = sub.add_parser("ablation", help="train the flags ladder and evaluate each rung")
    p.add_argument("--config", help="flat dotted-key JSON config file")
    p.add_argument("--corpus", help="training corpus directory")
    p.add_argument("--guidance")
    p.add_argument("--eval-corpora", required=True, dest="eval_corpora",
                   help="name=dir pairs or corpus dirs, comma-separated")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", default="ablation")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_ablation)

    p = sub.add_parser("parse-expr", help="tokenize, find the head noun, build the prompt")
    p.add_argument("expression")
    p.add_argument("--template", default="manual", choices=sorted(TEMPLATES))
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_parse_expr)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # noqa: BLE001 — boundary: report and exit nonzero
        json.dump({"error": type(e).__name__, "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
