"""Scene rendering, expression generation, RLE/PPM codecs, corpus manifests."""

import dataclasses
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refseg.synth.corpus import (
    PROFILES,
    CorruptManifest,
    Sample,
    build_corpus,
    load_corpus_meta,
    load_manifest,
)
from refseg.synth.expressions import STYLES, generate_expression
from refseg.synth.ppm import read_pbm, read_ppm, write_pbm, write_ppm
from refseg.synth.rle import BadRunSum, rle_decode, rle_encode
from refseg.synth.scenes import (
    PlacementFailure,
    S1_SHAPES,
    S2_SHAPES,
    SceneConfig,
    generate_scene,
)
from refseg.text_prompt import _load_wordlist

SPATIAL = _load_wordlist("spatial")


def scenes_over(seeds, config=SceneConfig()):
    """Scenes for the seeds that place successfully (hard seeds may not)."""
    out = []
    for seed in seeds:
        try:
            out.append(generate_scene(seed, config))
        except PlacementFailure:
            continue
    assert len(out) >= len(list(seeds)) // 2
    return out

masks_8x8 = st.lists(st.booleans(), min_size=64, max_size=64).map(
    lambda bs: np.array(bs, dtype=bool).reshape(8, 8)
)


# -- RLE ----------------------------------------------------------------------


def test_rle_all_background():
    assert rle_encode(np.zeros((4, 4), dtype=bool)) == [16]


def test_rle_all_foreground():
    assert rle_encode(np.ones((4, 4), dtype=bool)) == [0, 16]


def test_rle_decode_validates_total():
    with pytest.raises(BadRunSum):
        rle_decode([3, 4], (4, 4))


@given(masks_8x8)
@settings(max_examples=100, deadline=None)
def test_rle_roundtrip(mask):
    runs = rle_encode(mask)
    np.testing.assert_array_equal(rle_decode(runs, mask.shape), mask)
    assert sum(runs) == mask.size
    assert all(r >= 0 for r in runs) and all(r > 0 for r in runs[1:])


# -- PPM / PBM ----------------------------------------------------------------


def test_ppm_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, size=(9, 7, 3), dtype=np.uint8)
    path = tmp_path / "img.ppm"
    write_ppm(str(path), img)
    np.testing.assert_array_equal(read_ppm(str(path)), img)


def test_pbm_roundtrip(tmp_path, rng):
    mask = rng.random((11, 13)) > 0.5
    path = tmp_path / "mask.pbm"
    write_pbm(str(path), mask)
    np.testing.assert_array_equal(read_pbm(str(path)), mask)


# -- scenes -------------------------------------------------------------------


def test_scene_deterministic():
    a = generate_scene(123)
    b = generate_scene(123)
    np.testing.assert_array_equal(a.image, b.image)
    assert len(a.masks) == len(b.masks)
    for ma, mb in zip(a.masks, b.masks):
        np.testing.assert_array_equal(ma, mb)


def test_scene_object_count_within_config():
    for s in scenes_over(range(20)):
        lo, hi = s.config.n_objects
        assert lo <= len(s.objects) <= hi


def test_scene_masks_disjoint_and_visible():
    for s in scenes_over(range(20)):
        total = np.zeros(s.image.shape[:2], dtype=np.int64)
        for m in s.masks:
            assert m.sum() >= s.config.min_visible
            total += m
        assert total.max() <= 1, "visible masks must partition after occlusion"


def test_scene_mask_pixels_carry_object_color():
    s = generate_scene(5)
    from refseg.synth.scenes import PALETTE

    for obj, m in zip(s.objects, s.masks):
        pix = s.image[m]
        expect = np.array(PALETTE[obj.color])
        assert (np.abs(pix.astype(int) - expect).max(axis=1) <= 30).mean() > 0.9


def test_scene_overlap_profile_allows_occlusion():
    cfg = SceneConfig(
        n_objects=(5, 6), size_range=(5.0, 8.0), allow_overlap=True, distinct_pairs=False
    )
    s = generate_scene(3, cfg)
    assert len(s.objects) >= 5


# -- expressions --------------------------------------------------------------


def test_expression_styles_verified_and_deterministic():
    rng1 = np.random.default_rng(9)
    rng2 = np.random.default_rng(9)
    s = generate_scene(11)
    for style in STYLES:
        g1 = generate_expression(s, 0, style, rng1)
        g2 = generate_expression(s, 0, style, rng2)
        assert g1.expression.text == g2.expression.text
        assert g1.style == style


def test_appearance_only_has_no_location_words():
    rng = np.random.default_rng(2)
    for s in scenes_over(range(15)):
        for i in range(len(s.objects)):
            try:
                g = generate_expression(s, i, "appearance_only", rng)
            except Exception:
                continue
            assert not (set(g.expression.tokens) & SPATIAL), g.expression.text


def test_longform_is_at_least_8_tokens():
    rng = np.random.default_rng(4)
    hits = 0
    for s in scenes_over(range(30)):
        try:
            g = generate_expression(s, 0, "longform", rng)
        except Exception:
            continue
        hits += 1
        assert len(g.expression.tokens) >= 8, g.expression.text
    assert hits > 5


def test_expression_identifies_target_uniquely():
    """The generator's own verifier is trusted; spot-check plain color+shape."""
    rng = np.random.default_rng(6)
    s = generate_scene(21)
    for i, obj in enumerate(s.objects):
        try:
            g = generate_expression(s, i, "appearance_only", rng)
        except Exception:
            continue
        # any other object matching both the noun and a mentioned color would
        # make the expression ambiguous — the verifier must have excluded that
        toks = set(g.expression.tokens)
        for j, other in enumerate(s.objects):
            if j == i or other.shape != obj.shape:
                continue
            if obj.shape in toks and other.color == obj.color:
                # identical (shape,color) pairs may only differ by size words
                assert toks & {"big", "bigger", "biggest", "large", "largest",
                               "small", "smaller", "smallest", "tiny"}, g.expression.text


# -- corpora ------------------------------------------------------------------


def test_profiles_shape_sets_disjoint():
    assert not (set(PROFILES["a"].shapes) & set(PROFILES["c"].shapes))
    assert set(PROFILES["a"].shapes) == set(S1_SHAPES)
    assert set(PROFILES["c"].shapes) == set(S2_SHAPES)


def test_corpus_build_deterministic(tmp_path):
    prof = dataclasses.replace(PROFILES["a"], splits=(("train", 6), ("val", 2), ("test", 2)))
    m1 = build_corpus(prof, str(tmp_path / "c1"), seed=5)
    m2 = build_corpus(prof, str(tmp_path / "c2"), seed=5)
    for split in ("train", "val", "test"):
        s1 = load_manifest(str(tmp_path / "c1"), split)
        s2 = load_manifest(str(tmp_path / "c2"), split)
        assert [s.expression for s in s1] == [s.expression for s in s2]
        assert [s.rle for s in s1] == [s.rle for s in s2]
        for a, b in zip(s1, s2):
            np.testing.assert_array_equal(a.load_image(), b.load_image())
    assert m1.splits == m2.splits


def test_corpus_splits_use_disjoint_scene_seeds(corpora_root):
    for name in ("a", "b", "c"):
        seen: dict[str, set[int]] = {}
        for split in ("train", "val", "test"):
            samples = load_manifest(os.path.join(corpora_root, name), split)
            seen[split] = {s.scene_seed for s in samples}
        assert not (seen["train"] & seen["val"])
        assert not (seen["train"] & seen["test"])
        assert not (seen["val"] & seen["test"])


def test_corpus_b_is_location_free(corpora_root):
    for split in ("train", "val", "test"):
        for s in load_manifest(os.path.join(corpora_root, "b"), split):
            from refseg.text_prompt import tokenize

            assert not (set(tokenize(s.expression)) & SPATIAL), s.expression


def test_corpus_masks_match_rle_and_canvas(corpora_root):
    samples = load_manifest(os.path.join(corpora_root, "a"), "val")
    for s in samples:
        m = s.mask()
        assert m.shape == (s.canvas, s.canvas)
        assert m.sum() >= 16
        img = s.load_image()
        assert img.shape == (3, s.canvas, s.canvas)
        assert 0.0 <= img.min() and img.max() <= 1.0


def test_corpus_meta_and_manifest_fields(corpora_root):
    meta = load_corpus_meta(os.path.join(corpora_root, "a"))
    assert meta["name"] == "a"
    assert set(meta["splits"]) == {"train", "val", "test"}
    samples = load_manifest(os.path.join(corpora_root, "a"), "test")
    assert all(isinstance(s, Sample) for s in samples)


def test_load_manifest_rejects_missing_fields(tmp_path, corpora_root):
    src = os.path.join(corpora_root, "a")
    dst = tmp_path / "broken"
    import shutil

    shutil.copytree(src, dst)
    path = dst / "manifest_test.jsonl"
    lines = path.read_text().splitlines()
    rec = json.loads(lines[0])
    del rec["rle"]
    path.write_text("\n".join([json.dumps(rec)] + lines[1:]) + "\n")
    with pytest.raises(CorruptManifest):
        load_manifest(str(dst), "test")


def test_load_manifest_rejects_bad_json(tmp_path, corpora_root):
    import shutil

    dst = tmp_path / "broken2"
    shutil.copytree(os.path.join(corpora_root, "a"), dst)
    (dst / "manifest_val.jsonl").write_text("{not json\n")
    with pytest.raises(CorruptManifest):
        load_manifest(str(dst), "val")


def test_corpus_d_is_eval_only_with_clutter():
    prof = PROFILES["d"]
    assert dict(prof.splits).get("train", 0) == 0
    assert prof.scene_config().allow_overlap
    assert set(prof.scene_config().shapes) == set(S1_SHAPES) | set(S2_SHAPES)
