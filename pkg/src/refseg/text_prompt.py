"""Referring-expression tokenization, head-noun extraction, and prompting.

An expression like "the can in the middle" is augmented with a fixed suffix
naming its head noun — "the can in the middle . it is a can" — so the text
encoder always sees the category word in a unified context.  The suffix
template is fixed text, never learned.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

__all__ = [
    "EmptyExpression",
    "NoNounFound",
    "ExpressionTooLong",
    "Expression",
    "TargetNoun",
    "PromptedExpression",
    "Vocabulary",
    "MANUAL_TEMPLATE",
    "DESCRIBES_TEMPLATE",
    "TEMPLATES",
    "tokenize",
    "extract_target_noun",
    "build_prompted_expression",
    "encode_tokens",
    "PAD_ID",
    "UNK_ID",
]


class EmptyExpression(ValueError):
    """Expression contains no tokens after normalization."""


class NoNounFound(ValueError):
    """No token classifies as a noun and no fallback applies."""


class ExpressionTooLong(ValueError):
    """Prompted token sequence exceeds the encoder budget."""


# Suffix context: a separator period, then fixed template words; the head noun
# is appended after these by build_prompted_expression.
MANUAL_TEMPLATE: tuple[str, ...] = (".", "it", "is", "a")
DESCRIBES_TEMPLATE: tuple[str, ...] = (".", "it", "describes", "a")
TEMPLATES = {"manual": MANUAL_TEMPLATE, "describes": DESCRIBES_TEMPLATE}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase word/punctuation tokens; punctuation splits off on its own."""
    toks = _TOKEN_RE.findall(text.lower())
    if not toks:
        raise EmptyExpression(f"no tokens in {text!r}")
    return toks


@dataclass(frozen=True)
class Expression:
    text: str
    tokens: tuple[str, ...] = field(default=())

    @classmethod
    def parse(cls, text: str) -> "Expression":
        return cls(text=text, tokens=tuple(tokenize(text)))


@dataclass(frozen=True)
class TargetNoun:
    token: str
    source_index: int


@dataclass(frozen=True)
class PromptedExpression:
    original: Expression
    target: TargetNoun
    context_tokens: tuple[str, ...]

    @property
    def full_tokens(self) -> tuple[str, ...]:
        return self.original.tokens + self.context_tokens + (self.target.token,)


def _load_wordlist(name: str) -> frozenset[str]:
    text = resources.files("refseg.lexicon").joinpath(f"{name}.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


DETERMINERS = _load_wordlist("determiners")
PREPOSITIONS = _load_wordlist("prepositions")
ADJECTIVES = _load_wordlist("adjectives")
SPATIAL = _load_wordlist("spatial")
NOUNS = _load_wordlist("nouns")

_PUNCT_RE = re.compile(r"^[^\w\s]$")


def _is_noun(tok: str) -> bool:
    if tok in NOUNS:
        return True
    # cheap plural handling: "circles" -> "circle"
    return len(tok) > 2 and tok.endswith("s") and tok[:-1] in NOUNS


def _np_class(tok: str) -> bool:
    """Token kinds that can continue the leading noun phrase."""
    return (
        tok in DETERMINERS or tok in ADJECTIVES or tok in SPATIAL or _is_noun(tok)
    )


def extract_target_noun(expr: Expression) -> TargetNoun:
    """Head noun of the expression via a deterministic rule chain.

    1. Take the maximal leading run of determiner/adjective/spatial/noun
       tokens (the subject noun phrase, cut off by the first preposition,
       punctuation mark, or other word) and pick its last noun.
    2. Otherwise pick the last noun anywhere in the expression.
    3. Otherwise pick the last token that is not a determiner, preposition,
       or punctuation mark.
    """
    toks = expr.tokens
    cut = len(toks)
    for i, t in enumerate(toks):
        if not _np_class(t):
            cut = i
            break
    for i in range(cut - 1, -1, -1):
        if _is_noun(toks[i]):
            return TargetNoun(token=toks[i], source_index=i)
    for i in range(len(toks) - 1, -1, -1):
        if _is_noun(toks[i]):
            return TargetNoun(token=toks[i], source_index=i)
    for i in range(len(toks) - 1, -1, -1):
        t = toks[i]
        if t in DETERMINERS or t in PREPOSITIONS or _PUNCT_RE.match(t):
            continue
        return TargetNoun(token=t, source_index=i)
    raise NoNounFound(f"no head candidate in {expr.text!r}")


def build_prompted_expression(
    expr: Expression, template: Sequence[str] = MANUAL_TEMPLATE
) -> PromptedExpression:
    """Append ``<template> <head-noun>`` to the expression's tokens."""
    target = extract_target_noun(expr)
    return PromptedExpression(
        original=expr, target=target, context_tokens=tuple(template)
    )


PAD_ID = 0
UNK_ID = 1


class Vocabulary:
    """Dense token→id map with reserved padding (0) and unknown (1) ids."""

    def __init__(self, tokens: Iterable[str]):
        self.id_of: dict[str, int] = {"<pad>": PAD_ID, "<unk>": UNK_ID}
        for tok in sorted(set(tokens)):
            if tok not in self.id_of:
                self.id_of[tok] = len(self.id_of)
        self.token_of = {i: t for t, i in self.id_of.items()}

    def __len__(self) -> int:
        return len(self.id_of)

    def __contains__(self, tok: str) -> bool:
        return tok in self.id_of

    def encode(self, tok: str) -> int:
        return self.id_of.get(tok, UNK_ID)

    def to_json(self) -> dict:
        return {"tokens": [self.token_of[i] for i in range(2, len(self.id_of))]}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(obj["tokens"])


def encode_tokens(
    p: PromptedExpression | Sequence[str], vocab: Vocabulary, max_len: int
) -> tuple[list[int], list[int]]:
    """Pad token ids to ``max_len``; mask is 1 on real tokens, 0 on padding."""
    toks = p.full_tokens if isinstance(p, PromptedExpression) else tuple(p)
    if len(toks) > max_len:
        raise ExpressionTooLong(f"{len(toks)} tokens exceeds max_len={max_len}")
    ids = [vocab.encode(t) for t in toks] + [PAD_ID] * (max_len - len(toks))
    mask = [1] * len(toks) + [0] * (max_len - len(toks))
    return ids, mask
