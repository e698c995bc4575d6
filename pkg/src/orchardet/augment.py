"""The eight-method augmentation pipeline with label-consistent geometry.

Methods: random contrast, edge enhancement, contrast-limited adaptive
histogram equalization, motion blur, perspective transformation, salt and
pepper noise, max pool, color temperature. Only perspective moves truth
boxes; every method preserves image dimensions. A chain stores explicit
parameters plus a seed per step, so replaying a chain on the same input
reproduces the output bit for bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .boxes import Box, GroundTruth
from .synth import Scene

log = logging.getLogger(__name__)

METHODS = (
    "contrast",
    "edge_enhance",
    "clahe",
    "motion_blur",
    "perspective",
    "salt_pepper",
    "max_pool",
    "color_temperature",
)

CLAHE_GRID = 8
CLAHE_CLIP = 2.0
MOTION_BLUR_LEN = 9
SALT_PEPPER_P = 0.02
PERSPECTIVE_JITTER = 0.05


@dataclass(frozen=True)
class AugStep:
    method: str
    params: dict
    seed: int


@dataclass(frozen=True)
class AugmentationChain:
    steps: tuple[AugStep, ...]


def make_chain(methods: list[str], base_seed: int, image_shape: tuple[int, int]) -> AugmentationChain:
    """Draw concrete parameters for each method from the base seed."""
    h, w = image_shape
    steps = []
    for i, m in enumerate(methods):
        if m not in METHODS:
            raise ValueError(f"unknown augmentation {m!r}; expected one of {METHODS}")
        seed = int(np.random.SeedSequence([base_seed, i]).generate_state(1)[0])
        rng = np.random.default_rng(seed)
        if m == "contrast":
            params = {"c": float(rng.uniform(0.5, 1.5))}
        elif m == "motion_blur":
            params = {"angle": float(rng.uniform(0, np.pi))}
        elif m == "perspective":
            jx = rng.uniform(-PERSPECTIVE_JITTER, PERSPECTIVE_JITTER, 4) * w
            jy = rng.uniform(-PERSPECTIVE_JITTER, PERSPECTIVE_JITTER, 4) * h
            params = {"jitter_x": [float(v) for v in jx], "jitter_y": [float(v) for v in jy]}
        elif m == "salt_pepper":
            params = {"p": SALT_PEPPER_P}
        elif m == "color_temperature":
            params = {"t": float(rng.uniform(0.8, 1.25))}
        else:
            params = {}
        steps.append(AugStep(m, params, seed))
    return AugmentationChain(tuple(steps))


def _conv2_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 'same' convolution with edge-replicated borders."""
    k = kernel.shape[0]
    p = k // 2
    padded = np.pad(img.astype(np.float64), ((p, p), (p, p), (0, 0)), mode="edge")
    h, w = img.shape[:2]
    out = np.zeros((h, w, img.shape[2]), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            kv = kernel[i, j]
            if kv:
                out += kv * padded[i:i + h, j:j + w]
    return out


def _contrast(img: np.ndarray, c: float) -> np.ndarray:
    return np.clip((img.astype(np.float64) - 128.0) * c + 128.0, 0, 255).astype(np.uint8)


def _edge_enhance(img: np.ndarray) -> np.ndarray:
    kernel = np.array([[0, -1, 0], [-1, 5, -1], [0, -1, 0]], dtype=np.float64)
    return np.clip(np.rint(_conv2_same(img, kernel)), 0, 255).astype(np.uint8)


def _luminance(img: np.ndarray) -> np.ndarray:
    f = img.astype(np.float64)
    return np.clip(np.rint(0.299 * f[:, :, 0] + 0.587 * f[:, :, 1] + 0.114 * f[:, :, 2]),
                   0, 255).astype(np.intp)


def clahe_tile_mapping(tile_values: np.ndarray, clip_limit: float = CLAHE_CLIP
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Clipped-histogram equalization mapping for one tile.

    Returns (clipped histogram before redistribution, value mapping LUT).
    The histogram is clipped at clip_limit * npix / 256; the excess is
    spread evenly so a constant tile maps close to the identity ramp.
    """
    npix = tile_values.size
    hist = np.bincount(tile_values.ravel(), minlength=256).astype(np.float64)
    limit = max(1.0, clip_limit * npix / 256.0)
    clipped = np.minimum(hist, limit)
    excess = hist.sum() - clipped.sum()
    redistributed = clipped + excess / 256.0
    cdf = np.cumsum(redistributed)
    lut = np.clip(np.rint(cdf * 255.0 / npix), 0, 255)
    return clipped, lut


def _clahe(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    g = CLAHE_GRID
    if h % g or w % g:
        raise ValueError(f"clahe: image {h}x{w} not divisible into a {g}x{g} tile grid")
    th, tw = h // g, w // g
    lum = _luminance(img)
    luts = np.zeros((g, g, 256))
    for ti in range(g):
        for tj in range(g):
            tile = lum[ti * th:(ti + 1) * th, tj * tw:(tj + 1) * tw]
            _, luts[ti, tj] = clahe_tile_mapping(tile)
    # bilinear blend between the four surrounding tile mappings
    ys = (np.arange(h) + 0.5) / th - 0.5
    xs = (np.arange(w) + 0.5) / tw - 0.5
    yi0 = np.clip(np.floor(ys).astype(int), 0, g - 1)
    xi0 = np.clip(np.floor(xs).astype(int), 0, g - 1)
    yi1 = np.minimum(yi0 + 1, g - 1)
    xi1 = np.minimum(xi0 + 1, g - 1)
    fy = np.clip(ys - np.floor(ys), 0, 1)
    fx = np.clip(xs - np.floor(xs), 0, 1)
    fy = np.where(ys < 0, 0.0, np.where(ys > g - 1, 1.0, fy))[:, None]
    fx = np.where(xs < 0, 0.0, np.where(xs > g - 1, 1.0, fx))[None, :]
    v = lum
    m00 = luts[yi0[:, None], xi0[None, :], v]
    m01 = luts[yi0[:, None], xi1[None, :], v]
    m10 = luts[yi1[:, None], xi0[None, :], v]
    m11 = luts[yi1[:, None], xi1[None, :], v]
    new_lum = ((1 - fy) * ((1 - fx) * m00 + fx * m01) + fy * ((1 - fx) * m10 + fx * m11))
    gain = (new_lum + 1.0) / (lum + 1.0)
    return np.clip(np.rint(img.astype(np.float64) * gain[:, :, None]), 0, 255).astype(np.uint8)


def motion_blur_kernel(angle: float, length: int = MOTION_BLUR_LEN) -> np.ndarray:
    """Unit-sum line kernel of the given length and orientation."""
    k = np.zeros((length, length))
    c = (length - 1) / 2
    for t in np.linspace(-c, c, 4 * length + 1):
        i = int(round(c + t * np.sin(angle)))
        j = int(round(c + t * np.cos(angle)))
        k[i, j] = 1.0
    return k / k.sum()


def _motion_blur(img: np.ndarray, angle: float) -> np.ndarray:
    return np.clip(np.rint(_conv2_same(img, motion_blur_kernel(angle))), 0, 255).astype(np.uint8)


def _salt_pepper(img: np.ndarray, p: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.random(img.shape[:2])
    out = img.copy()
    out[u < p / 2] = 0
    out[(u >= p / 2) & (u < p)] = 255
    return out


def _max_pool(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"max_pool: even dimensions required, got {h}x{w}")
    pooled = img.reshape(h // 2, 2, w // 2, 2, 3).max(axis=(1, 3))
    return np.repeat(np.repeat(pooled, 2, axis=0), 2, axis=1)


def _color_temperature(img: np.ndarray, t: float) -> np.ndarray:
    f = img.astype(np.float64)
    f[:, :, 0] *= t
    f[:, :, 2] /= t
    return np.clip(np.rint(f), 0, 255).astype(np.uint8)


def homography_from_corners(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 projective map sending the 4 src corners to the dst corners."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        x, y = src[i]
        u, v = dst[i]
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    coef = np.linalg.solve(a, b)
    return np.append(coef, 1.0).reshape(3, 3)


def warp_bilinear(img: np.ndarray, hmat: np.ndarray, fill: str = "edge") -> np.ndarray:
    """Inverse-map warp with bilinear sampling.

    fill='edge' clamps samples to the border; fill='zero' treats outside
    as 0 (used by the mask oracle).
    """
    h, w = img.shape[:2]
    hinv = np.linalg.inv(hmat)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    denom = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    sx = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / denom
    sy = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / denom
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = (sx - x0)[:, :, None]
    fy = (sy - y0)[:, :, None]
    flat = img.reshape(h * w, -1).astype(np.float64)

    def sample(yi, xi):
        if fill == "edge":
            yi = np.clip(yi, 0, h - 1)
            xi = np.clip(xi, 0, w - 1)
            return flat[yi * w + xi]
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = flat[np.where(inside, yi * w + xi, 0)]
        vals[~inside] = 0.0
        return vals

    v00 = sample(y0, x0)
    v01 = sample(y0, x0 + 1)
    v10 = sample(y0 + 1, x0)
    v11 = sample(y0 + 1, x0 + 1)
    out = ((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11))
    return out if img.ndim == 3 else out[:, :, 0]


def perspective_boxes(truths: list[GroundTruth], hmat: np.ndarray,
                      size_hw: tuple[int, int]) -> list[GroundTruth]:
    """Map boxes as the axis-aligned hull of their transformed corners,
    clipped to the canvas; degenerate results are dropped with a log line."""
    h, w = size_hw
    out = []
    for t in truths:
        b = t.box
        corners = np.array([[b.x1, b.y1, 1], [b.x2, b.y1, 1],
                            [b.x2, b.y2, 1], [b.x1, b.y2, 1]], dtype=np.float64)
        mapped = corners @ hmat.T
        mx = mapped[:, 0] / mapped[:, 2]
        my = mapped[:, 1] / mapped[:, 2]
        x1, x2 = max(0.0, mx.min()), min(float(w), mx.max())
        y1, y2 = max(0.0, my.min()), min(float(h), my.max())
        if x2 - x1 < 1e-6 or y2 - y1 < 1e-6:
            log.info("perspective: truth clipped to zero area, dropping %s", b)
            continue
        out.append(replace(t, box=Box.from_corners(x1, y1, x2, y2, class_id=b.class_id)))
    return out


def perspective_homography(size_hw: tuple[int, int], jitter_x, jitter_y) -> np.ndarray:
    h, w = size_hw
    src = np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=np.float64)
    dst = src + np.stack([np.asarray(jitter_x), np.asarray(jitter_y)], axis=1)
    return homography_from_corners(src, dst)


def apply_step(scene: Scene, step: AugStep) -> Scene:
    img = scene.image
    truths = scene.truths
    m = step.method
    if m == "contrast":
        img = _contrast(img, step.params["c"])
    elif m == "edge_enhance":
        img = _edge_enhance(img)
    elif m == "clahe":
        img = _clahe(img)
    elif m == "motion_blur":
        img = _motion_blur(img, step.params["angle"])
    elif m == "perspective":
        hmat = perspective_homography(img.shape[:2], step.params["jitter_x"],
                                      step.params["jitter_y"])
        warped = warp_bilinear(img, hmat, fill="edge")
        img = np.clip(np.rint(warped), 0, 255).astype(np.uint8)
        truths = perspective_boxes(truths, hmat, img.shape[:2])
    elif m == "salt_pepper":
        img = _salt_pepper(img, step.params["p"], step.seed)
    elif m == "max_pool":
        img = _max_pool(img)
    elif m == "color_temperature":
        img = _color_temperature(img, step.params["t"])
    else:
        raise ValueError(f"unknown augmentation {m!r}")
    return Scene(image=img, truths=truths, seed=scene.seed, occlusion=scene.occlusion)


def augment(scene: Scene, chain: AugmentationChain) -> Scene:
    """Apply a parameter chain; replay with the same chain is identical."""
    out = scene
    for step in chain.steps:
        out = apply_step(out, step)
    return out
