"""Feature-map heat maps: channel-mean absolute activation, rendered to
grayscale at input resolution."""
from __future__ import annotations

import logging

import numpy as np

from .netpbm import write_pgm

log = logging.getLogger(__name__)


def heatmap_image(feature: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """(c, h, w) activations -> (out_h, out_w) uint8 heat map.

    Reduction is mean |activation| over channels, min-max normalized to
    0..255 and nearest-upsampled. A constant map normalizes to all zeros
    (with a warning) since the value range is empty.
    """
    if feature.ndim != 3:
        raise ValueError(f"feature map must be (c,h,w), got shape {feature.shape}")
    out_h, out_w = out_hw
    h, w = feature.shape[1:]
    if out_h % h or out_w % w:
        raise ValueError(f"output {out_hw} is not an integer upsample of {h}x{w}")
    m = np.abs(feature).mean(axis=0, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        log.warning("heatmap: constant feature map, emitting all-zero image")
        norm = np.zeros_like(m)
    else:
        norm = (m - lo) / (hi - lo) * 255.0
    u8 = np.clip(np.rint(norm), 0, 255).astype(np.uint8)
    return np.repeat(np.repeat(u8, out_h // h, axis=0), out_w // w, axis=1)


def heatmap_export(feature: np.ndarray, out_hw: tuple[int, int], path: str) -> None:
    """Write the heat map of one feature map as a binary grayscale file."""
    write_pgm(path, heatmap_image(feature, out_hw))
