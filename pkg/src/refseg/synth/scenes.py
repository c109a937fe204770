"""Procedural scene generator: colored geometric objects on a 64×64 canvas.

Shapes are rasterized on pixel centers; visibility is resolved by paint order
(later objects occlude earlier ones).  Everything derives deterministically
from an integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PlacementFailure",
    "PALETTE",
    "COLOR_NAMES",
    "S1_SHAPES",
    "S2_SHAPES",
    "ALL_SHAPES",
    "ObjectSpec",
    "SceneConfig",
    "Scene",
    "rasterize",
    "generate_scene",
]


class PlacementFailure(RuntimeError):
    """Could not place the requested objects within the retry budget."""


PALETTE: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 170, 60),
    "blue": (50, 80, 220),
    "yellow": (230, 215, 50),
    "orange": (240, 150, 40),
    "purple": (150, 60, 200),
    "pink": (240, 130, 180),
    "brown": (140, 90, 45),
}
COLOR_NAMES: tuple[str, ...] = tuple(PALETTE)

S1_SHAPES: tuple[str, ...] = ("circle", "square", "triangle", "bar")
S2_SHAPES: tuple[str, ...] = ("ring", "cross", "diamond", "pentagon")
ALL_SHAPES: tuple[str, ...] = S1_SHAPES + S2_SHAPES


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    size: float
    cx: float
    cy: float


@dataclass(frozen=True)
class SceneConfig:
    canvas: int = 64
    n_objects: tuple[int, int] = (2, 4)
    size_range: tuple[float, float] = (6.0, 11.0)
    shapes: tuple[str, ...] = S1_SHAPES
    backgrounds: tuple[str, ...] = ("flat",)
    allow_overlap: bool = False
    distinct_pairs: bool = True
    min_visible: int = 16
    max_place_tries: int = 60


@dataclass
class Scene:
    seed: int
    config: SceneConfig
    objects: list[ObjectSpec]
    background: str
    image: np.ndarray                 # (H, W, 3) uint8
    masks: list[np.ndarray] = field(default_factory=list)   # visible, disjoint

    def centroid(self, i: int) -> tuple[float, float]:
        ys, xs = np.nonzero(self.masks[i])
        return float(xs.mean()), float(ys.mean())

    def visible_area(self, i: int) -> int:
        return int(self.masks[i].sum())


def rasterize(obj: ObjectSpec, canvas: int) -> np.ndarray:
    """Boolean occupancy of the (un-occluded) shape on the pixel grid."""
    ys, xs = np.mgrid[0:canvas, 0:canvas]
    px = xs + 0.5
    py = ys + 0.5
    dx = px - obj.cx
    dy = py - obj.cy
    s = obj.size
    if obj.shape == "circle":
        return dx * dx + dy * dy <= s * s
    if obj.shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.88 * s
    if obj.shape == "triangle":
        top = -s
        bot = 0.75 * s
        frac = (dy - top) / (bot - top)
        return (dy >= top) & (dy <= bot) & (np.abs(dx) <= s * frac)
    if obj.shape == "bar":
        return (np.abs(dx) <= 1.8 * s) & (np.abs(dy) <= 0.45 * s)
    if obj.shape == "ring":
        d2 = dx * dx + dy * dy
        return (d2 <= s * s) & (d2 >= (0.55 * s) ** 2)
    if obj.shape == "cross":
        arm = 0.36 * s
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= s)) | (
            (np.abs(dy) <= arm) & (np.abs(dx) <= s)
        )
    if obj.shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= 1.2 * s
    if obj.shape == "pentagon":
        r = 1.1 * s
        ang = -np.pi / 2 + 2 * np.pi * np.arange(5) / 5
        vx = obj.cx + r * np.cos(ang)
        vy = obj.cy + r * np.sin(ang)
        inside = np.ones((canvas, canvas), dtype=bool)
        for k in range(5):
            x1, y1 = vx[k], vy[k]
            x2, y2 = vx[(k + 1) % 5], vy[(k + 1) % 5]
            inside &= (px - x1) * (y2 - y1) - (py - y1) * (x2 - x1) <= 0
        return inside
    raise ValueError(f"unknown shape {obj.shape!r}")


def _render_background(rng: np.random.Generator, style: str, canvas: int) -> np.ndarray:
    if style == "flat":
        g = rng.integers(195, 216)
        return np.full((canvas, canvas, 3), g, dtype=np.float64)
    if style == "gradient":
        g0 = float(rng.integers(120, 170))
        g1 = float(rng.integers(180, 235))
        t = np.linspace(0.0, 1.0, canvas)
        ramp = g0 + (g1 - g0) * t
        plane = ramp[:, None] if rng.random() < 0.5 else ramp[None, :]
        img = np.broadcast_to(plane[..., None], (canvas, canvas, 3)).copy()
        tint = rng.uniform(0.92, 1.08, size=3)
        return img * tint
    if style == "noise":
        base = float(rng.integers(150, 185))
        noise = rng.uniform(-40, 40, size=(canvas, canvas))
        return np.clip(base + noise, 0, 255)[..., None] * np.ones(3)
    raise ValueError(f"unknown background style {style!r}")


def _dilate(mask: np.ndarray, it: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(it):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> Scene:
    """Deterministic scene from ``seed``; raises PlacementFailure if crowded."""
    rng = np.random.default_rng(seed)
    canvas = config.canvas
    n = int(rng.integers(config.n_objects[0], config.n_objects[1] + 1))
    background = config.backgrounds[int(rng.integers(len(config.backgrounds)))]

    objects: list[ObjectSpec] = []
    rasters: list[np.ndarray] = []
    occupied = np.zeros((canvas, canvas), dtype=bool)
    used_pairs: set[tuple[str, str]] = set()
    for _ in range(n):
        placed = False
        for _try in range(config.max_place_tries):
            shape = config.shapes[int(rng.integers(len(config.shapes)))]
            color = COLOR_NAMES[int(rng.integers(len(COLOR_NAMES)))]
            if config.distinct_pairs and (shape, color) in used_pairs:
                continue
            size = float(rng.uniform(*config.size_range))
            reach = 1.9 * size
            lo, hi = reach, canvas - reach
            if lo >= hi:
                continue
            cx = float(rng.uniform(lo, hi))
            cy = float(rng.uniform(lo, hi))
            obj = ObjectSpec(shape, color, size, cx, cy)
            ras = rasterize(obj, canvas)
            if ras.sum() < config.min_visible:
                continue
            if not config.allow_overlap and (ras & _dilate(occupied, 2)).any():
                continue
            objects.append(obj)
            rasters.append(ras)
            occupied |= ras
            used_pairs.add((shape, color))
            placed = True
            break
        if not placed:
            raise PlacementFailure(f"seed {seed}: placed {len(objects)} of {n}")

    # Later objects sit on top; visible masks are disjoint by construction.
    masks: list[np.ndarray] = []
    above = np.zeros((canvas, canvas), dtype=bool)
    for ras in reversed(rasters):
        masks.append(ras & ~above)
        above |= ras
    masks.reverse()
    for m in masks:
        if m.sum() < config.min_visible:
            raise PlacementFailure(f"seed {seed}: object occluded below {config.min_visible} px")

    img = _render_background(rng, background, canvas)
    for obj, mask in zip(objects, masks):
        img[mask] = PALETTE[obj.color]
    return Scene(
        seed=seed,
        config=config,
        objects=objects,
        background=background,
        image=np.clip(img, 0, 255).astype(np.uint8),
        masks=masks,
    )
