from .rle import BadRunSum, rle_decode, rle_encode
from .scenes import PALETTE, S1_SHAPES, S2_SHAPES, PlacementFailure, Scene, SceneConfig, generate_scene
from .expressions import CannotDisambiguate, generate_expression
from .corpus import (
    CorruptManifest,
    CorpusManifest,
    PROFILES,
    Sample,
    build_corpora,
    build_corpus,
    load_corpus_meta,
    load_manifest,
)

__all__ = [
    "BadRunSum",
    "rle_encode",
    "rle_decode",
    "PALETTE",
    "S1_SHAPES",
    "S2_SHAPES",
    "PlacementFailure",
    "Scene",
    "SceneConfig",
    "generate_scene",
    "CannotDisambiguate",
    "generate_expression",
    "CorruptManifest",
    "CorpusManifest",
    "PROFILES",
    "Sample",
    "build_corpora",
    "build_corpus",
    "load_corpus_meta",
    "load_manifest",
]
