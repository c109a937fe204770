"""Shared fixtures: tiny corpora and small models, built once per session."""

from __future__ import annotations

import dataclasses
import os

import numpy as np
import pytest

from refseg.config import FlagConfig, ModelConfig
from refseg.model import RISModel
from refseg.synth.corpus import PROFILES, build_corpus, load_manifest
from refseg.text_prompt import Vocabulary
from refseg.train import build_vocab

TINY_SPLITS = (("train", 12), ("val", 3), ("test", 5))


@pytest.fixture(scope="session")
def corpora_root(tmp_path_factory) -> str:
    """Small a/b/c/d corpora (shared read-only across the whole run)."""
    root = tmp_path_factory.mktemp("corpora")
    for name in ("a", "b", "c"):
        prof = dataclasses.replace(PROFILES[name], splits=TINY_SPLITS)
        build_corpus(prof, str(root / name), seed=7)
    prof_d = dataclasses.replace(PROFILES["d"], splits=(("test", 5),))
    build_corpus(prof_d, str(root / "d"), seed=7)
    return str(root)


@pytest.fixture(scope="session")
def train_samples(corpora_root):
    return load_manifest(os.path.join(corpora_root, "a"), "train")


@pytest.fixture(scope="session")
def tiny_vocab(train_samples) -> Vocabulary:
    return build_vocab(train_samples)


def make_model(
    vocab: Vocabulary,
    flags: FlagConfig = FlagConfig(False, False, False),
    base_channels: int = 16,
    c_text: int = 32,
    seed: int = 0,
) -> RISModel:
    cfg = ModelConfig(base_channels=base_channels, c_text=c_text)
    return RISModel(cfg, flags, vocab, seed=seed, guidance_source="seed:17")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    """One verdict line per acceptance criterion, printed after the run."""
    try:
        from test_acceptance import CRITERIA
    except ImportError:
        return
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(CRITERIA):
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {name:22s} {verdict}  {detail}")
