"""Synthetic orchard scenes with exact labels.

Each scene is a textured green/brown background with shaded red circles
("apples") and elongated dark strokes ("branches"). An apple whose disc
is covered more than the occlusion threshold by anything drawn after it
is labelled as blocked; small distant apples keep the graspable label
regardless. Everything derives from one seeded generator, so a scene is
a pure function of (seed, config).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import APPLE, BLOCK, Box, GroundTruth


@dataclass
class SceneConfig:
    size: int = 64
    min_objects: int = 2
    max_objects: int = 5
    radius_frac: tuple[float, float] = (0.055, 0.20)
    small_radius_frac: float = 0.085
    occluder_density: float = 1.0      # scales both targeted and stray strokes
    occlusion_threshold: float = 0.25  # disc fraction covered -> blocked label
    min_box_px: float = 2.0

    def __post_init__(self):
        if self.size % 32:
            raise ValueError(f"scene size must be divisible by 32, got {self.size}")
        if self.min_objects < 0 or self.max_objects < self.min_objects:
            raise ValueError("bad object count range")


@dataclass
class Scene:
    image: np.ndarray                 # (h, w, 3) uint8
    truths: list[GroundTruth]
    seed: int
    occlusion: list[float] = field(default_factory=list)  # per kept object


def _disc_mask(xx, yy, cx, cy, r) -> np.ndarray:
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _stroke_mask(xx, yy, x0, y0, x1, y1, half_width) -> np.ndarray:
    """Thick line segment: points within half_width of the segment."""
    dx, dy = x1 - x0, y1 - y0
    seg2 = dx * dx + dy * dy
    if seg2 == 0:
        return _disc_mask(xx, yy, x0, y0, half_width)
    t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / seg2, 0.0, 1.0)
    px, py = x0 + t * dx, y0 + t * dy
    return (xx - px) ** 2 + (yy - py) ** 2 <= half_width * half_width


def _paint(img: np.ndarray, mask: np.ndarray, color: np.ndarray) -> None:
    img[mask] = color[mask] if color.ndim == 3 else color


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = np.array([rng.uniform(55, 90), rng.uniform(95, 135), rng.uniform(45, 80)])
    coarse = rng.normal(0.0, 16.0, (size // 8, size // 8, 3))
    tex = np.kron(coarse, np.ones((8, 8, 1)))
    fine = rng.normal(0.0, 5.0, (size, size, 3))
    return np.clip(base[None, None, :] + tex + fine, 0, 255)


def _apple_layer(rng, xx, yy, cx, cy, r) -> np.ndarray:
    """Shaded red disc colors for the whole canvas (masked by caller)."""
    base = np.array([rng.uniform(175, 230), rng.uniform(40, 90), rng.uniform(25, 60)])
    d2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / (r * r)
    shade = 1.0 - 0.45 * np.clip(d2, 0, 1)
    hx, hy = cx - 0.35 * r, cy - 0.35 * r
    glow = 55.0 * np.exp(-((xx - hx) ** 2 + (yy - hy) ** 2) / (0.18 * r * r))
    return np.clip(base[None, None, :] * shade[:, :, None] + glow[:, :, None], 0, 255)


def generate_scene(seed: int, config: SceneConfig | None = None) -> Scene:
    """Deterministic scene synthesis; objects fully outside the canvas are
    dropped rather than erroring."""
    cfg = config or SceneConfig()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    s = cfg.size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    img = _background(rng, s)

    r_lo, r_hi = cfg.radius_frac[0] * s, cfg.radius_frac[1] * s
    small_r = cfg.small_radius_frac * s
    count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))

    discs = []      # (cx, cy, r, mask)
    for _ in range(count):
        if rng.random() < 0.3:
            r = rng.uniform(r_lo, min(small_r, r_hi))
        else:
            r = rng.uniform(min(small_r, r_hi), r_hi)
        # a few placement attempts to keep fruit mostly separated
        for _attempt in range(8):
            cx = rng.uniform(0.4 * r, s - 0.4 * r)
            cy = rng.uniform(0.4 * r, s - 0.4 * r)
            if all((cx - ox) ** 2 + (cy - oy) ** 2 > (0.8 * (r + orad)) ** 2
                   for ox, oy, orad, _ in discs):
                break
        else:
            continue
        mask = _disc_mask(xx, yy, cx, cy, r)
        _paint(img, mask, _apple_layer(rng, xx, yy, cx, cy, r))
        discs.append((cx, cy, r, mask))

    # strokes: some aimed across large apples, some stray
    strokes = np.zeros((s, s), dtype=bool)
    stroke_color_base = np.array([52.0, 38.0, 22.0])
    for (cx, cy, r, _) in discs:
        if r >= small_r and rng.random() < 0.5 * cfg.occluder_density:
            ang = rng.uniform(0, np.pi)
            off = rng.uniform(-0.35 * r, 0.35 * r)
            ox, oy = -np.sin(ang) * off, np.cos(ang) * off
            hl = 1.6 * r
            x0, y0 = cx + ox - np.cos(ang) * hl, cy + oy - np.sin(ang) * hl
            x1, y1 = cx + ox + np.cos(ang) * hl, cy + oy + np.sin(ang) * hl
            m = _stroke_mask(xx, yy, x0, y0, x1, y1, max(1.0, rng.uniform(0.28, 0.45) * r))
            color = np.clip(stroke_color_base + rng.normal(0, 6, 3), 0, 255)
            _paint(img, m, color)
            strokes |= m
    n_stray = int(np.floor(rng.uniform(0, 3) * cfg.occluder_density))
    for _ in range(n_stray):
        x0, y0 = rng.uniform(0, s, 2)
        ang = rng.uniform(0, np.pi)
        ln = rng.uniform(0.3 * s, 0.8 * s)
        x1, y1 = x0 + np.cos(ang) * ln, y0 + np.sin(ang) * ln
        m = _stroke_mask(xx, yy, x0, y0, x1, y1, rng.uniform(1.0, 2.2))
        color = np.clip(stroke_color_base + rng.normal(0, 6, 3), 0, 255)
        _paint(img, m, color)
        strokes |= m

    truths: list[GroundTruth] = []
    occ_fracs: list[float] = []
    for (cx, cy, r, mask) in discs:
        area = int(mask.sum())
        if area == 0:
            continue
        # branch/leaf strokes are what blocks a grasp; fruit seldom overlaps
        # (placement keeps separation) and does not flip the label
        occ = float((mask & strokes).sum()) / area
        x1, y1 = max(0.0, cx - r), max(0.0, cy - r)
        x2, y2 = min(float(s), cx + r), min(float(s), cy + r)
        if x2 - x1 < cfg.min_box_px or y2 - y1 < cfg.min_box_px:
            continue
        if r < small_r:
            cls = APPLE                      # small far targets stay graspable
        else:
            cls = BLOCK if occ > cfg.occlusion_threshold else APPLE
        truths.append(GroundTruth(Box.from_corners(x1, y1, x2, y2, class_id=cls)))
        occ_fracs.append(occ)

    return Scene(image=img.astype(np.uint8), truths=truths, seed=seed, occlusion=occ_fracs)


def sample_seed(base_seed: int, index: int) -> int:
    """Splittable per-sample seed so parallel generation stays replayable."""
    mix = np.random.SeedSequence([base_seed, index]).generate_state(1)[0]
    return int(mix)
