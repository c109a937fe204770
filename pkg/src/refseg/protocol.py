"""Zero-shot cross-dataset evaluation grid and the ablation ladder driver."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor

from .checkpoint import MissingCheckpoint, read_checkpoint_meta
from .metrics import EmptyResultSet, MetricReport, SampleResult, aggregate, iou
from .model import RISModel
from .synth.corpus import Sample, load_manifest

__all__ = [
    "evaluate_model",
    "run_cross_dataset",
    "ablation_run",
    "save_grid",
    "render_grid",
]


def _eval_one(model: RISModel, sample: Sample, sid: int) -> SampleResult:
    pred = model.predict(sample.load_image(), sample.expression)
    return iou(pred.mask, sample.mask(), sample_id=sid)


def evaluate_model(
    model: RISModel, samples: list[Sample], threads: int = 1
) -> tuple[MetricReport, list[SampleResult]]:
    """Per-sample IoU in manifest order, then a deterministic reduce."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda p: _eval_one(model, p[1], p[0]), enumerate(samples)))
    else:
        results = [_eval_one(model, s, i) for i, s in enumerate(samples)]
    return aggregate(results), results


def run_cross_dataset(
    checkpoints: dict[str, str],
    corpora: dict[str, str],
    split: str = "test",
    threads: int = 1,
) -> dict:
    """Evaluate each checkpoint on every corpus's ``split``.

    Returns the grid as {rows, cols, cells}; rows follow the checkpoint map
    order, cols the corpora map order.  A cell is flagged in_distribution when
    the evaluation corpus is the one the checkpoint trained on (recorded in
    its meta; falls back to row/col name equality for hand-built checkpoints).
    A corpus with an empty split yields an error cell rather than aborting
    the grid.
    """
    rows = list(checkpoints)
    cols = list(corpora)
    loaded_samples = {c: load_manifest(corpora[c], split) for c in cols}
    cells = []
    for row in rows:
        if not os.path.exists(checkpoints[row]):
            raise MissingCheckpoint(checkpoints[row])
        model = RISModel.load(checkpoints[row])
        train_corpus = read_checkpoint_meta(checkpoints[row]).get("train_corpus_path")
        row_cells = []
        for col in cols:
            try:
                report, _ = evaluate_model(model, loaded_samples[col], threads=threads)
                cell = report.to_json()
            except EmptyResultSet:
                cell = {"error": "EmptyResultSet", "n": 0}
            if train_corpus is not None:
                cell["in_distribution"] = os.path.realpath(corpora[col]) == train_corpus
            else:
                cell["in_distribution"] = row == col
            row_cells.append(cell)
        cells.append(row_cells)
    return {"rows": rows, "cols": cols, "cells": cells}


def ablation_run(
    train_fn,
    rungs: tuple[str, ...],
    eval_corpora: dict[str, str],
    split: str = "test",
    threads: int = 1,
) -> dict:
    """Train once per rung (via ``train_fn(rung) -> checkpoint path``) and
    evaluate each result on every corpus; rows mirror the flags ladder."""
    results = {}
    checkpoints = {}
    for rung in rungs:
        ckpt_path = train_fn(rung)
        checkpoints[rung] = ckpt_path
        model = RISModel.load(ckpt_path)
        per_corpus = {}
        for name, cdir in eval_corpora.items():
            samples = load_manifest(cdir, split)
            report, _ = evaluate_model(model, samples, threads=threads)
            per_corpus[name] = report.to_json()
        results[rung] = per_corpus
    return {"rungs": list(rungs), "corpora": list(eval_corpora), "results": results,
            "checkpoints": checkpoints}


def save_grid(grid: dict, path: str) -> None:
    with open(path, "w") as f:
        json.dump(grid, f, indent=1, sort_keys=True)
        f.write("\n")


def render_grid(grid: dict) -> str:
    """Aligned text table; in-distribution cells are bracketed."""
    rows, cols, cells = grid["rows"], grid["cols"], grid["cells"]
    width = 26
    out = ["train\\eval".ljust(12) + "".join(c.ljust(width) for c in cols)]
    for r, row_cells in zip(rows, cells):
        line = r.ljust(12)
        for cell in row_cells:
            if "error" in cell:
                txt = cell["error"]
            else:
                txt = f"o{cell['oiou']:.3f} m{cell['miou']:.3f} p{cell['prec']['0.5']:.2f}"
            if cell.get("in_distribution"):
                txt = f"[{txt}]"
            line += txt.ljust(width)
        out.append(line)
    return "\n".join(out)
