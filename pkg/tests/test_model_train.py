"""End-to-end model behavior: census, persistence, training, exact resume."""

from __future__ import annotations

import dataclasses
import os

import numpy as np
import pytest

from conftest import make_model
from refseg.checkpoint import checkpoint_hash, read_checkpoint_meta
from refseg.config import FlagConfig, ModelConfig, OptimConfig, RunConfig, TrainConfig
from refseg.model import RISModel
from refseg.optim import AdamW
from refseg.protocol import (
    ablation_run,
    evaluate_model,
    render_grid,
    run_cross_dataset,
    save_grid,
)
from refseg.synth.corpus import load_manifest
from refseg.text_prompt import TEMPLATES, tokenize
from refseg.train import TrainResult, build_vocab, train, training_step


def census(model) -> list[tuple[str, tuple]]:
    return [(n, p.shape) for n, p in model.named_parameters()]


def test_build_vocab_includes_template_words(train_samples, tiny_vocab):
    for template in TEMPLATES.values():
        for word in template:
            assert word in tiny_vocab
    for s in train_samples:
        for tok in tokenize(s.expression):
            assert tok in tiny_vocab


def test_target_prompt_flag_does_not_change_census(tiny_vocab):
    base = make_model(tiny_vocab, flags=FlagConfig(False, False, False))
    tp = make_model(tiny_vocab, flags=FlagConfig(True, False, False))
    assert census(base) == census(tp)
    # identical init too: the prompt flag only reroutes the text pipeline
    for (_, p1), (_, p2) in zip(base.named_parameters(), tp.named_parameters()):
        assert np.array_equal(p1.data, p2.data)


def test_full_flags_add_only_mfa_and_decoder_projections(tiny_vocab):
    base = dict(census(make_model(tiny_vocab)))
    full = dict(census(make_model(tiny_vocab, flags=FlagConfig(True, True, True))))
    added = sorted(set(full) - set(base))
    assert all(k.startswith("mfa.") or ".wp" in k or k.startswith("decoder.wp") for k in added)
    removed = set(base) - set(full)
    assert not removed
    # shared names keep identical shapes apart from guidance-widened conv1 inputs
    for k in base:
        if k in full and "rhos" not in k:
            assert base[k] == full[k], k


def test_baseline_never_touches_mfa_or_guidance(tiny_vocab, rng):
    model = make_model(tiny_vocab)
    assert model._guidance is None and not hasattr(model, "mfa")
    ids, mask = model.prepare_text("the red square")
    model.forward_logits(rng.standard_normal((3, 32, 32)), ids, mask)
    assert model.counters == {"mfa": 0, "guidance": 0}


def test_full_model_counts_mfa_and_guidance_calls(tiny_vocab, rng):
    model = make_model(tiny_vocab, flags=FlagConfig(True, True, True))
    ids, mask = model.prepare_text("the red square")
    model.forward_logits(rng.standard_normal((3, 32, 32)), ids, mask)
    model.forward_logits(rng.standard_normal((3, 32, 32)), ids, mask)
    assert model.counters == {"mfa": 2, "guidance": 2}


def test_prepare_text_routes_through_prompt_flag(tiny_vocab):
    base = make_model(tiny_vocab)
    tp = make_model(tiny_vocab, flags=FlagConfig(True, False, False))
    ids_b, mask_b = base.prepare_text("the red square")
    ids_t, mask_t = tp.prepare_text("the red square")
    assert mask_t.sum() == mask_b.sum() + 5        # ". it is a square"
    assert not np.array_equal(ids_b, ids_t)


def test_save_load_identical_predictions(tmp_path, tiny_vocab, rng):
    model = make_model(tiny_vocab, flags=FlagConfig(True, True, True))
    img = rng.standard_normal((3, 64, 64))
    before = model.predict(img, "the red square")
    path = str(tmp_path / "model.ckpt")
    model.save(path, extra_meta={"step": 0})
    loaded = RISModel.load(path)
    after = loaded.predict(img, "the red square")
    assert np.array_equal(before.prob, after.prob)
    assert np.array_equal(before.mask, after.mask)
    assert loaded.flags == model.flags and loaded.cfg == model.cfg
    assert read_checkpoint_meta(path)["step"] == 0


def tiny_run_config(corpora_root, **over) -> RunConfig:
    cfg = RunConfig(
        model=ModelConfig(base_channels=16, c_text=32),
        flags=over.pop("flags", FlagConfig(False, False, False)),
        optim=OptimConfig(lr=1e-3),
        train=TrainConfig(steps=over.pop("steps", 3), batch_size=2, seed=0, log_every=0),
        corpus=os.path.join(corpora_root, over.pop("corpus", "a")),
        guidance=over.pop("guidance", "seed:17"),
    )
    assert not over
    return cfg


def test_training_step_reduces_loss(tiny_vocab, train_samples):
    model = make_model(tiny_vocab)
    opt = AdamW(model.named_parameters(), lr=2e-3, weight_decay=0.0)
    batch = train_samples[:2]
    first = training_step(model, opt, batch)
    for _ in range(8):
        last = training_step(model, opt, batch)
    assert last < first


def test_train_writes_artifacts_and_loss_csv(tmp_path, corpora_root):
    out = str(tmp_path / "run")
    res = train(tiny_run_config(corpora_root), out)
    assert isinstance(res, TrainResult)
    for path in (res.checkpoint_path, res.optim_path, res.loss_csv_path, res.config_path):
        assert os.path.exists(path)
    lines = open(res.loss_csv_path).read().splitlines()
    assert lines[0] == "step,loss"
    assert len(lines) == 1 + 3
    # losses in the CSV are exact reprs of the returned floats
    assert [float(row.split(",")[1]) for row in lines[1:]] == res.losses
    meta = read_checkpoint_meta(res.checkpoint_path)
    assert meta["train_corpus_path"] == os.path.realpath(os.path.join(corpora_root, "a"))
    assert meta["step"] == 3


def test_training_leaves_guidance_untouched(tmp_path, corpora_root):
    out = str(tmp_path / "run")
    cfg = tiny_run_config(corpora_root, flags=FlagConfig(True, True, True), guidance="autoenc")
    # resolve_guidance writes the pretrained twin before training starts
    res = train(cfg, out)
    guide_path = os.path.join(out, "guidance_autoenc.ckpt")
    assert os.path.exists(guide_path)
    hash_after_train = checkpoint_hash(guide_path)
    # retraining from the same frozen twin cannot modify it
    train(tiny_run_config(corpora_root, flags=FlagConfig(True, True, True),
                          guidance=f"autoenc:{guide_path}"), str(tmp_path / "run2"))
    assert checkpoint_hash(guide_path) == hash_after_train
    assert read_checkpoint_meta(res.checkpoint_path)["guidance_source"].startswith("autoenc:")


def test_interrupted_resume_matches_uninterrupted(tmp_path, corpora_root):
    full_out = str(tmp_path / "full")
    res_full = train(tiny_run_config(corpora_root, steps=4), full_out)

    half_out = str(tmp_path / "half")
    train(tiny_run_config(corpora_root, steps=2), half_out)
    res_resumed = train(tiny_run_config(corpora_root, steps=4), half_out, resume=True)

    assert res_resumed.start_step == 2
    assert res_full.losses[2:] == res_resumed.losses
    assert checkpoint_hash(os.path.join(full_out, "model.ckpt")) == checkpoint_hash(
        os.path.join(half_out, "model.ckpt")
    )
    assert checkpoint_hash(os.path.join(full_out, "optim.ckpt")) == checkpoint_hash(
        os.path.join(half_out, "optim.ckpt")
    )
    assert open(os.path.join(full_out, "loss.csv")).read() == open(
        os.path.join(half_out, "loss.csv")
    ).read()


def test_evaluate_model_orders_and_threads_agree(tmp_path, corpora_root, tiny_vocab):
    model = make_model(tiny_vocab)
    samples = load_manifest(os.path.join(corpora_root, "a"), "test")
    rep1, res1 = evaluate_model(model, samples, threads=1)
    rep2, res2 = evaluate_model(model, samples, threads=2)
    assert [r.sample_id for r in res1] == list(range(len(samples)))
    assert res1 == res2
    assert rep1 == rep2


def test_cross_dataset_grid_structure(tmp_path, corpora_root):
    out_a = str(tmp_path / "ck_a")
    out_b = str(tmp_path / "ck_b")
    train(tiny_run_config(corpora_root, corpus="a"), out_a)
    train(tiny_run_config(corpora_root, corpus="b"), out_b)
    ckpts = {
        "A": os.path.join(out_a, "model.ckpt"),
        "B": os.path.join(out_b, "model.ckpt"),
    }
    corpora = {n.upper(): os.path.join(corpora_root, n) for n in ("a", "b", "c")}
    grid = run_cross_dataset(ckpts, corpora, split="test")
    assert grid["rows"] == ["A", "B"] and grid["cols"] == ["A", "B", "C"]
    assert len(grid["cells"]) == 2 and all(len(r) == 3 for r in grid["cells"])
    flags = [[c["in_distribution"] for c in row] for row in grid["cells"]]
    assert flags == [[True, False, False], [False, True, False]]
    for row in grid["cells"]:
        for cell in row:
            assert {"oiou", "miou", "prec", "n", "in_distribution"} <= set(cell)

    # determinism: a rerun serializes byte-identically
    p1, p2 = str(tmp_path / "g1.json"), str(tmp_path / "g2.json")
    save_grid(grid, p1)
    save_grid(run_cross_dataset(ckpts, corpora, split="test"), p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()

    text = render_grid(grid)
    assert "train\\eval" in text and "[" in text


def test_cross_dataset_missing_checkpoint(tmp_path, corpora_root):
    from refseg.checkpoint import MissingCheckpoint

    with pytest.raises(MissingCheckpoint):
        run_cross_dataset(
            {"A": str(tmp_path / "absent.ckpt")},
            {"A": os.path.join(corpora_root, "a")},
        )


def test_ablation_run_rows(tmp_path, corpora_root):
    calls = []

    def train_fn(rung):
        calls.append(rung)
        out = str(tmp_path / rung.replace(" ", "").replace("+", "p").replace("&", "_"))
        from refseg.config import rung_flags

        cfg = tiny_run_config(corpora_root, flags=rung_flags(rung))
        return train(cfg, out).checkpoint_path

    corpora = {"B": os.path.join(corpora_root, "b")}
    table = ablation_run(train_fn, ("baseline", "+ TP"), corpora, split="test")
    assert calls == ["baseline", "+ TP"]
    assert table["rungs"] == ["baseline", "+ TP"]
    assert set(table["results"]) == {"baseline", "+ TP"}
    assert "0.9" in table["results"]["baseline"]["B"]["prec"]
    assert all(os.path.exists(p) for p in table["checkpoints"].values())
