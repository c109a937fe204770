"""Corpus builder: scenes + verified expressions → PPM images and JSONL manifests.

Four profiles emulate different train/eval distributions:

* ``a`` — locational + appearance expressions, shape set S1, flat backgrounds.
* ``b`` — appearance-only expressions, same S1 shapes and backgrounds
  (expression-style shift relative to ``a``).
* ``c`` — all expression styles, disjoint shape set S2, gradient/noise
  backgrounds (visual-domain shift).
* ``d`` — eval-only clutter: many small overlapping objects, noise
  backgrounds, longform expressions.

Scene seeds are structured as ``(base, corpus, split) << 32 | counter`` so
splits occupy disjoint seed ranges by construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .expressions import CannotDisambiguate, generate_expression
from .ppm import read_ppm, write_ppm
from .rle import rle_decode, rle_encode
from .scenes import (
    ALL_SHAPES,
    PlacementFailure,
    S1_SHAPES,
    S2_SHAPES,
    SceneConfig,
    generate_scene,
)

__all__ = [
    "CorruptManifest",
    "CorpusProfile",
    "PROFILES",
    "CorpusManifest",
    "Sample",
    "build_corpus",
    "build_corpora",
    "load_corpus_meta",
    "load_manifest",
]

META_NAME = "corpus.json"


class CorruptManifest(ValueError):
    """Corpus metadata or manifest lines are missing or malformed."""


@dataclass(frozen=True)
class CorpusProfile:
    name: str
    index: int
    shapes: tuple[str, ...]
    backgrounds: tuple[str, ...]
    styles: tuple[tuple[str, float], ...]
    n_objects: tuple[int, int] = (2, 4)
    size_range: tuple[float, float] = (6.0, 11.0)
    allow_overlap: bool = False
    distinct_pairs: bool = True
    splits: tuple[tuple[str, int], ...] = (("train", 2000), ("val", 200), ("test", 400))

    def scene_config(self) -> SceneConfig:
        return SceneConfig(
            n_objects=self.n_objects,
            size_range=self.size_range,
            shapes=self.shapes,
            backgrounds=self.backgrounds,
            allow_overlap=self.allow_overlap,
            distinct_pairs=self.distinct_pairs,
        )


PROFILES: dict[str, CorpusProfile] = {
    "a": CorpusProfile(
        name="a", index=0, shapes=S1_SHAPES, backgrounds=("flat",),
        styles=(("locational", 0.5), ("appearance_only", 0.5)),
    ),
    "b": CorpusProfile(
        name="b", index=1, shapes=S1_SHAPES, backgrounds=("flat",),
        styles=(("appearance_only", 1.0),),
    ),
    "c": CorpusProfile(
        name="c", index=2, shapes=S2_SHAPES, backgrounds=("gradient", "noise"),
        styles=(("locational", 1 / 3), ("appearance_only", 1 / 3), ("longform", 1 / 3)),
    ),
    "d": CorpusProfile(
        name="d", index=3, shapes=ALL_SHAPES, backgrounds=("noise",),
        styles=(("longform", 1.0),),
        n_objects=(4, 6), size_range=(4.5, 7.5),
        allow_overlap=True, distinct_pairs=False,
        splits=(("test", 400),),
    ),
}

_SPLIT_INDEX = {"train": 0, "val": 1, "test": 2}


@dataclass
class CorpusManifest:
    name: str
    root: str
    canvas: int
    seed: int
    splits: dict[str, int]
    styles: dict[str, float]
    shapes: list[str]
    backgrounds: list[str]
    manifests: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "canvas": self.canvas,
            "seed": self.seed,
            "splits": self.splits,
            "styles": self.styles,
            "shapes": self.shapes,
            "backgrounds": self.backgrounds,
            "manifests": self.manifests,
        }


@dataclass
class Sample:
    scene_seed: int
    image_path: str            # absolute, resolved at load time
    rle: list[int]
    expression: str
    style: str
    target_noun: str
    canvas: int

    def load_image(self) -> np.ndarray:
        """(3, H, W) float64 in [0, 1]."""
        img = read_ppm(self.image_path)
        return img.transpose(2, 0, 1).astype(np.float64) / 255.0

    def mask(self) -> np.ndarray:
        return rle_decode(self.rle, (self.canvas, self.canvas))


def _split_prefix(base_seed: int, corpus_index: int, split: str) -> int:
    return (((base_seed & 0xFFFF) * 8 + corpus_index) * 4 + _SPLIT_INDEX[split]) << 32


def build_corpus(profile: CorpusProfile | str, out_dir: str, seed: int = 0) -> CorpusManifest:
    """Generate one corpus into ``out_dir`` (images/ + per-split manifests)."""
    if isinstance(profile, str):
        profile = PROFILES[profile]
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    cfg = profile.scene_config()
    style_names = [s for s, _ in profile.styles]
    style_probs = np.array([p for _, p in profile.styles])
    style_probs = style_probs / style_probs.sum()

    manifest = CorpusManifest(
        name=profile.name,
        root=os.path.abspath(out_dir),
        canvas=cfg.canvas,
        seed=seed,
        splits={s: n for s, n in profile.splits},
        styles={s: float(p) for s, p in zip(style_names, style_probs)},
        shapes=list(profile.shapes),
        backgrounds=list(profile.backgrounds),
    )

    for split, n_samples in profile.splits:
        prefix = _split_prefix(seed, profile.index, split)
        lines = []
        counter = 0
        budget = 80 * n_samples + 1000
        while len(lines) < n_samples:
            if counter >= budget:
                raise PlacementFailure(
                    f"corpus {profile.name}/{split}: exhausted seed budget at {len(lines)} samples"
                )
            scene_seed = prefix + counter
            counter += 1
            try:
                scene = generate_scene(scene_seed, cfg)
            except PlacementFailure:
                continue
            rng = np.random.default_rng(scene_seed ^ 0x5EED)
            target = int(rng.integers(len(scene.objects)))
            style = style_names[int(rng.choice(len(style_names), p=style_probs))]
            try:
                gen = generate_expression(scene, target, style, rng)
            except CannotDisambiguate:
                continue
            rel_img = f"images/{split}_{len(lines):06d}.ppm"
            write_ppm(os.path.join(out_dir, rel_img), scene.image)
            lines.append(
                {
                    "scene_seed": scene_seed,
                    "image_path": rel_img,
                    "rle": rle_encode(scene.masks[target]),
                    "expression": gen.expression.text,
                    "style": gen.style,
                    "target_noun": gen.target_noun,
                }
            )
        man_name = f"manifest_{split}.jsonl"
        with open(os.path.join(out_dir, man_name), "w") as f:
            for line in lines:
                f.write(json.dumps(line, separators=(",", ":")) + "\n")
        manifest.manifests[split] = man_name

    with open(os.path.join(out_dir, META_NAME), "w") as f:
        json.dump(manifest.to_json(), f, indent=1, sort_keys=True)
    return manifest


def build_corpora(out_root: str, seed: int = 0, names: tuple[str, ...] = ("a", "b", "c")) -> list[CorpusManifest]:
    """Build several corpora under ``out_root/<name>``."""
    assert not (set(PROFILES["a"].shapes) & set(PROFILES["c"].shapes)), "S1/S2 must be disjoint"
    return [build_corpus(PROFILES[n], os.path.join(out_root, n), seed=seed) for n in names]


_REQUIRED_FIELDS = ("scene_seed", "image_path", "rle", "expression", "style", "target_noun")


def load_corpus_meta(corpus_dir: str) -> dict:
    path = os.path.join(corpus_dir, META_NAME)
    if not os.path.exists(path):
        raise CorruptManifest(f"missing {path}")
    try:
        with open(path) as f:
            meta = json.load(f)
    except ValueError as e:
        raise CorruptManifest(f"{path}: {e}")
    for key in ("name", "canvas", "manifests"):
        if key not in meta:
            raise CorruptManifest(f"{path}: missing key {key!r}")
    return meta


def load_manifest(corpus_dir: str, split: str) -> list[Sample]:
    meta = load_corpus_meta(corpus_dir)
    if split not in meta["manifests"]:
        raise CorruptManifest(f"corpus {meta['name']}: no split {split!r}")
    path = os.path.join(corpus_dir, meta["manifests"][split])
    if not os.path.exists(path):
        raise CorruptManifest(f"missing manifest file {path}")
    canvas = int(meta["canvas"])
    samples = []
    with open(path) as f:
        for ln, raw in enumerate(f, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except ValueError as e:
                raise CorruptManifest(f"{path}:{ln}: {e}")
            if not all(k in rec for k in _REQUIRED_FIELDS):
                missing = [k for k in _REQUIRED_FIELDS if k not in rec]
                raise CorruptManifest(f"{path}:{ln}: missing fields {missing}")
            samples.append(
                Sample(
                    scene_seed=int(rec["scene_seed"]),
                    image_path=os.path.join(corpus_dir, rec["image_path"]),
                    rle=list(rec["rle"]),
                    expression=rec["expression"],
                    style=rec["style"],
                    target_noun=rec["target_noun"],
                    canvas=canvas,
                )
            )
    return samples
