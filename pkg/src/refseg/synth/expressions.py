"""Template-based referring expressions with a symbolic unambiguity verifier.

Every candidate expression compiles to a small predicate structure evaluated
against the whole scene.  Per object the evaluation yields True (definitely
satisfies), False (definitely not) or None (too close to call — e.g. a
centroid within the margin band of a half-plane).  A sample is accepted only
when the target is True and every other object is False, so the ground-truth
referent is provable without running any model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..text_prompt import Expression
from .scenes import Scene

__all__ = ["CannotDisambiguate", "GeneratedExpression", "generate_expression", "STYLES"]


class CannotDisambiguate(RuntimeError):
    """No verified expression exists for this scene/target/style combination."""


STYLES = ("locational", "appearance_only", "longform")

GENERIC_NOUNS = ("thing", "object", "shape", "one")
SIZE_BIG = ("big", "large")
SIZE_SMALL = ("small", "little", "tiny")
IMAGE_WORDS = ("image", "picture", "scene")

# margins (pixels) below which a positional comparison is "too close to call"
HALF_BAND = 2.5
RANK_GAP = 3.0
CENTER_IN, CENTER_OUT = 9.0, 12.5
CORNER_BAND = 2.0
SIZE_RATIO = 1.3

T, F, N = True, False, None


@dataclass(frozen=True)
class GeneratedExpression:
    expression: Expression
    style: str
    target_noun: str


def _coord(scene: Scene, i: int, axis: str) -> float:
    cx, cy = scene.centroid(i)
    return cx if axis == "x" else cy


def _base_match(scene: Scene, noun: str, color: str | None) -> list[bool]:
    out = []
    for obj in scene.objects:
        ok = noun in GENERIC_NOUNS or obj.shape == noun
        if color is not None:
            ok = ok and obj.color == color
        out.append(ok)
    return out


def _tri_and(a, b):
    if a is F or b is F:
        return F
    if a is T and b is T:
        return T
    return N


def _half_status(coord: float, mid: float, low_side: bool):
    if low_side:
        if coord <= mid - HALF_BAND:
            return T
        if coord >= mid + HALF_BAND:
            return F
    else:
        if coord >= mid + HALF_BAND:
            return T
        if coord <= mid - HALF_BAND:
            return F
    return N


_SIDE_AXIS = {"left": ("x", True), "right": ("x", False), "top": ("y", True), "bottom": ("y", False)}


def _evaluate(scene: Scene, sem: dict) -> list:
    """Per-object True/False/None for the predicate structure ``sem``."""
    base = _base_match(scene, sem["noun"], sem.get("color"))
    n = len(scene.objects)
    mid = scene.config.canvas / 2.0
    kind = sem["kind"]
    status: list = [F] * n

    if kind == "plain":
        return [T if b else F for b in base]

    if kind == "half":
        axis, low = _SIDE_AXIS[sem["side"]]
        for i in range(n):
            if base[i]:
                status[i] = _half_status(_coord(scene, i, axis), mid, low)
        return status

    if kind == "center":
        for i in range(n):
            if not base[i]:
                continue
            cx, cy = scene.centroid(i)
            d = max(abs(cx - mid), abs(cy - mid))
            status[i] = T if d <= CENTER_IN else (F if d >= CENTER_OUT else N)
        return status

    if kind == "quadrant":
        ax1 = _SIDE_AXIS[sem["qx"]]
        ax2 = _SIDE_AXIS[sem["qy"]]
        for i in range(n):
            if not base[i]:
                continue
            sx = _half_status(_coord(scene, i, ax1[0]), mid, ax1[1])
            sy = _half_status(_coord(scene, i, ax2[0]), mid, ax2[1])
            status[i] = _tri_and(sx, sy)
        return status

    if kind == "pos_superlative":
        axis, low = _SIDE_AXIS[sem["side"]]
        scope = [i for i in range(n) if base[i]]
        coords = {i: _coord(scene, i, axis) for i in scope}
        sgn = 1.0 if low else -1.0
        for i in scope:
            others = [coords[j] for j in scope if j != i]
            if not others:
                status[i] = T
            elif all(sgn * (o - coords[i]) >= RANK_GAP for o in others):
                status[i] = T
            elif any(sgn * (coords[i] - o) >= RANK_GAP for o in others):
                status[i] = F
            else:
                status[i] = N
        return status

    if kind == "ordinal":
        axis, low = _SIDE_AXIS[sem["side"]]
        k = sem["rank"]
        scope = [i for i in range(n) if base[i]]
        if len(scope) < k:
            return [F if not base[i] else N for i in range(n)]
        sgn = 1.0 if low else -1.0
        order = sorted(scope, key=lambda i: sgn * _coord(scene, i, axis))
        gaps = [
            sgn * (_coord(scene, order[j + 1], axis) - _coord(scene, order[j], axis))
            for j in range(len(order) - 1)
        ]
        if any(g < RANK_GAP for g in gaps):
            return [F if not base[i] else N for i in range(n)]
        for pos, i in enumerate(order):
            status[i] = T if pos == k - 1 else F
        return status

    if kind == "size_superlative":
        big = sem["direction"] == "big"
        scope = [i for i in range(n) if base[i]]
        areas = {i: float(scene.visible_area(i)) for i in scope}
        for i in scope:
            others = [areas[j] for j in scope if j != i]
            mine = areas[i]
            if not others:
                status[i] = T
                continue
            if big:
                if all(mine >= SIZE_RATIO * o for o in others):
                    status[i] = T
                elif any(o >= mine for o in others):
                    status[i] = F
                else:
                    status[i] = N
            else:
                if all(o >= SIZE_RATIO * mine for o in others):
                    status[i] = T
                elif any(o <= mine for o in others):
                    status[i] = F
                else:
                    status[i] = N
        return status

    if kind == "closest_to":
        lm_matches = [
            i
            for i, obj in enumerate(scene.objects)
            if obj.shape == sem["lm_shape"] and obj.color == sem["lm_color"]
        ]
        if len(lm_matches) != 1:
            return [N] * n
        lm = lm_matches[0]
        lx, ly = scene.centroid(lm)
        scope = [i for i in range(n) if base[i] and i != lm]
        dists = {}
        for i in scope:
            cx, cy = scene.centroid(i)
            dists[i] = float(np.hypot(cx - lx, cy - ly))
        status[lm] = F
        for i in scope:
            others = [dists[j] for j in scope if j != i]
            if not others:
                status[i] = T
            elif all(o - dists[i] >= RANK_GAP for o in others):
                status[i] = T
            elif any(dists[i] - o >= RANK_GAP for o in others):
                status[i] = F
            else:
                status[i] = N
        return status

    raise ValueError(f"unknown predicate kind {kind!r}")


def _verified(scene: Scene, target: int, sem: dict) -> bool:
    status = _evaluate(scene, sem)
    return status[target] is T and all(
        status[j] is F for j in range(len(status)) if j != target
    )


# ---------------------------------------------------------------------------
# template instantiation: each helper proposes (words, sem) for the target


def _maybe_color(rng, obj, p=0.7):
    return obj.color if rng.random() < p else None


def _with_color(words_head: list[str], color: str | None, rest: list[str]) -> list[str]:
    mid = [color] if color else []
    return words_head + mid + rest


def _t_plain(scene, target, rng):
    obj = scene.objects[target]
    det = "the" if rng.random() < 0.8 else "a"
    color = _maybe_color(rng, obj, p=0.85)
    return _with_color([det], color, [obj.shape]), {
        "kind": "plain", "noun": obj.shape, "color": color,
    }


def _t_generic(scene, target, rng):
    obj = scene.objects[target]
    noun = GENERIC_NOUNS[int(rng.integers(len(GENERIC_NOUNS)))]
    det = "the" if noun == "one" or rng.random() < 0.8 else "a"
    return [det, obj.color, noun], {"kind": "plain", "noun": noun, "color": obj.color}


def _t_size(scene, target, rng):
    obj = scene.objects[target]
    others = [scene.visible_area(j) for j, o in enumerate(scene.objects)
              if j != target and o.shape == obj.shape]
    mine = scene.visible_area(target)
    if others and all(mine >= SIZE_RATIO * a for a in others):
        word = SIZE_BIG[int(rng.integers(len(SIZE_BIG)))]
        direction = "big"
    elif others and all(a >= SIZE_RATIO * mine for a in others):
        word = SIZE_SMALL[int(rng.integers(len(SIZE_SMALL)))]
        direction = "small"
    else:
        return None
    color = _maybe_color(rng, obj, p=0.4)
    return _with_color(["the", word], color, [obj.shape]), {
        "kind": "size_superlative", "noun": obj.shape, "color": color, "direction": direction,
    }


def _sides_holding(scene, target):
    mid = scene.config.canvas / 2.0
    out = []
    for side, (axis, low) in _SIDE_AXIS.items():
        if _half_status(_coord(scene, target, axis), mid, low) is T:
            out.append(side)
    return out


def _t_half(scene, target, rng):
    sides = _sides_holding(scene, target)
    if not sides:
        return None
    side = sides[int(rng.integers(len(sides)))]
    obj = scene.objects[target]
    color = _maybe_color(rng, obj, p=0.5)
    prep = "on" if side in ("left", "right") else "at"
    return _with_color(["the"], color, [obj.shape, prep, "the", side]), {
        "kind": "half", "noun": obj.shape, "color": color, "side": side,
    }


def _t_center(scene, target, rng):
    obj = scene.objects[target]
    color = _maybe_color(rng, obj, p=0.5)
    word = "middle" if rng.random() < 0.6 else "center"
    return _with_color(["the"], color, [obj.shape, "in", "the", word]), {
        "kind": "center", "noun": obj.shape, "color": color,
    }


def _t_quadrant(scene, target, rng, longform=False):
    sides = _sides_holding(scene, target)
    qx = next((s for s in sides if s in ("left", "right")), None)
    qy = next((s for s in sides if s in ("top", "bottom")), None)
    if qx is None or qy is None:
        return None
    obj = scene.objects[target]
    color = obj.color if longform else _maybe_color(rng, obj, p=0.5)
    words = _with_color(["the"], color, [obj.shape, "in", "the", qy, qx, "corner"])
    if longform:
        words += ["of", "the", IMAGE_WORDS[int(rng.integers(len(IMAGE_WORDS)))]]
    return words, {"kind": "quadrant", "noun": obj.shape, "color": color, "qx": qx, "qy": qy}


def _t_pos_superlative(scene, target, rng):
    obj = scene.objects[target]
    color = _maybe_color(rng, obj, p=0.3)
    side = list(_SIDE_AXIS)[int(rng.integers(4))]
    word = {"left": "leftmost", "right": "rightmost", "top": "topmost", "bottom": "bottommost"}[side]
    return _with_color(["the", word], color, [obj.shape]), {
        "kind": "pos_superlative", "noun": obj.shape, "color": color, "side": side,
    }


def _t_ordinal(scene, target, rng):
    obj = scene.objects[target]
    side = list(_SIDE_AXIS)[int(rng.integers(4))]
    axis, low = _SIDE_AXIS[side]
    scope = [j for j, o in enumerate(scene.objects) if o.shape == obj.shape]
    if len(scope) < 2:
        return None
    sgn = 1.0 if low else -1.0
    order = sorted(scope, key=lambda i: sgn * _coord(scene, i, axis))
    rank = order.index(target) + 1
    if rank < 2 or rank > 3:
        return None
    word = {2: "second", 3: "third"}[rank]
    return ["the", word, obj.shape, "from", "the", side], {
        "kind": "ordinal", "noun": obj.shape, "color": None, "side": side, "rank": rank,
    }


def _t_side_long(scene, target, rng):
    sides = _sides_holding(scene, target)
    if not sides:
        return None
    side = sides[int(rng.integers(len(sides)))]
    obj = scene.objects[target]
    edge = "side" if rng.random() < 0.6 else "edge"
    img = IMAGE_WORDS[int(rng.integers(len(IMAGE_WORDS)))]
    words = ["the", obj.color, obj.shape, "near", "the", side, edge, "of", "the", img]
    return words, {"kind": "half", "noun": obj.shape, "color": obj.color, "side": side}


def _t_closest(scene, target, rng):
    obj = scene.objects[target]
    # landmark must be a uniquely-described other object
    candidates = []
    for j, lm in enumerate(scene.objects):
        if j == target:
            continue
        same = [k for k, o in enumerate(scene.objects) if o.shape == lm.shape and o.color == lm.color]
        if same == [j]:
            candidates.append(j)
    if not candidates:
        return None
    lm = scene.objects[candidates[int(rng.integers(len(candidates)))]]
    words = ["the", obj.color, obj.shape, "closest", "to", "the", lm.color, lm.shape]
    return words, {
        "kind": "closest_to", "noun": obj.shape, "color": obj.color,
        "lm_shape": lm.shape, "lm_color": lm.color,
    }


_TEMPLATES = {
    "locational": (_t_half, _t_center, _t_quadrant, _t_pos_superlative, _t_ordinal),
    "appearance_only": (_t_plain, _t_plain, _t_size, _t_generic),
    "longform": (
        lambda s, t, r: _t_quadrant(s, t, r, longform=True),
        _t_side_long,
        _t_closest,
    ),
}


def generate_expression(
    scene: Scene, target: int, style: str, rng: np.random.Generator, tries: int = 12
) -> GeneratedExpression:
    """Verified expression for ``target``; raises CannotDisambiguate."""
    if style not in _TEMPLATES:
        raise ValueError(f"unknown style {style!r}")
    templates = _TEMPLATES[style]
    for _ in range(tries):
        tmpl = templates[int(rng.integers(len(templates)))]
        got = tmpl(scene, target, rng)
        if got is None:
            continue
        words, sem = got
        if style == "longform" and len(words) < 8:
            continue
        if _verified(scene, target, sem):
            return GeneratedExpression(
                expression=Expression.parse(" ".join(words)),
                style=style,
                target_noun=sem["noun"],
            )
    raise CannotDisambiguate(f"target {target} in scene {scene.seed} ({style})")
