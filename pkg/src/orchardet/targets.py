"""Ground-truth to anchor/cell assignment and box decoding.

Assignment follows the cross-grid scheme: a truth matches an anchor when
their width and height ratios stay under a threshold, and it populates
the owning cell plus the horizontally and vertically nearest neighbour
cells. Decoding inverts the head parameterization
    xy = (2*sigmoid(t) - 0.5 + cell) * stride
    wh = (2*sigmoid(t))^2 * anchor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import Box, Detection, GroundTruth
from .network import NetworkSpec

ANCHOR_RATIO_LIMIT = 4.0


@dataclass
class LevelAssignment:
    """Assigned slots for one head level; arrays indexed together."""

    stride: int
    grid_h: int
    grid_w: int
    image: np.ndarray      # (M,) batch index
    row: np.ndarray        # (M,) cell row
    col: np.ndarray        # (M,) cell col
    anchor: np.ndarray     # (M,) anchor index
    box: np.ndarray        # (M,4) target cx,cy,w,h in pixels
    cls: np.ndarray        # (M,) target class id

    def __len__(self) -> int:
        return len(self.image)


@dataclass
class AssignedTargets:
    levels: list[LevelAssignment] = field(default_factory=list)

    def total(self) -> int:
        return sum(len(lv) for lv in self.levels)


def _anchor_ok(tw: float, th: float, aw: float, ah: float) -> bool:
    r = max(tw / aw, aw / tw, th / ah, ah / th)
    return r < ANCHOR_RATIO_LIMIT


def _candidate_cells(gx: float, gy: float, gw: int, gh: int) -> list[tuple[int, int]]:
    """Owning cell plus the nearest horizontal and vertical neighbours."""
    ci, cj = int(math.floor(gx)), int(math.floor(gy))
    cells = [(cj, ci)]
    fx, fy = gx - ci, gy - cj
    if fx < 0.5 and ci > 0:
        cells.append((cj, ci - 1))
    elif fx >= 0.5 and ci < gw - 1:
        cells.append((cj, ci + 1))
    if fy < 0.5 and cj > 0:
        cells.append((cj - 1, ci))
    elif fy >= 0.5 and cj < gh - 1:
        cells.append((cj + 1, ci))
    return cells


def assign_targets(truths: list[GroundTruth], spec: NetworkSpec,
                   image_size: tuple[int, int]) -> AssignedTargets:
    """Map truths (pixel units) onto (level, cell, anchor) slots.

    When two truths claim the same slot the lower truth index wins, so
    the result carries no duplicate (level, image, cell, anchor) keys.
    """
    img_h, img_w = image_size
    if img_h % spec.max_stride or img_w % spec.max_stride:
        raise ValueError(f"image size {image_size} not divisible by stride {spec.max_stride}")
    for t in truths:
        if t.box.w <= 0 or t.box.h <= 0:
            raise ValueError(f"truth with nonpositive extent: {t}")

    out = AssignedTargets()
    for stride in spec.head_strides:
        gh, gw = img_h // stride, img_w // stride
        anchors = spec.anchors[stride]
        taken: set[tuple[int, int, int, int]] = set()
        rows = []
        for truth in truths:
            b = truth.box
            gx, gy = b.cx / stride, b.cy / stride
            if not (0 <= gx < gw and 0 <= gy < gh):
                continue
            cells = _candidate_cells(gx, gy, gw, gh)
            for ai, (aw, ah) in enumerate(anchors):
                if not _anchor_ok(b.w, b.h, aw, ah):
                    continue
                for (r, c) in cells:
                    key = (truth.image_id, r, c, ai)
                    if key in taken:
                        continue
                    taken.add(key)
                    rows.append((truth.image_id, r, c, ai, b.cx, b.cy, b.w, b.h, b.class_id))
        if rows:
            arr = np.array(rows, dtype=np.float64)
            lv = LevelAssignment(
                stride=stride, grid_h=gh, grid_w=gw,
                image=arr[:, 0].astype(np.intp), row=arr[:, 1].astype(np.intp),
                col=arr[:, 2].astype(np.intp), anchor=arr[:, 3].astype(np.intp),
                box=arr[:, 4:8], cls=arr[:, 8].astype(np.intp))
        else:
            empty = np.zeros(0, dtype=np.intp)
            lv = LevelAssignment(stride, gh, gw, empty, empty.copy(), empty.copy(),
                                 empty.copy(), np.zeros((0, 4)), empty.copy())
        out.levels.append(lv)
    return out


def decode_boxes(raw: np.ndarray, spec: NetworkSpec, stride: int,
                 conf_thresh: float = 0.0) -> list[Detection]:
    """Decode one image's raw head map into detections.

    ``raw`` has shape (anchors*(5+classes), gh, gw), anchor-major.
    Confidence is sigmoid(objectness) * sigmoid(best class logit).
    """
    na, nc = spec.num_anchors, spec.num_classes
    per = 5 + nc
    if raw.ndim != 3 or raw.shape[0] != na * per:
        raise ValueError(f"raw head map shape {raw.shape} != ({na * per}, gh, gw)")
    gh, gw = raw.shape[1], raw.shape[2]
    anchors = spec.anchors[stride]
    r = raw.reshape(na, per, gh, gw)
    s = _sigmoid(r)
    cols = np.arange(gw, dtype=np.float64)
    rows = np.arange(gh, dtype=np.float64)
    out: list[Detection] = []
    for a in range(na):
        aw, ah = anchors[a]
        cx = (2 * s[a, 0] - 0.5 + cols[None, :]) * stride
        cy = (2 * s[a, 1] - 0.5 + rows[:, None]) * stride
        w = (2 * s[a, 2]) ** 2 * aw
        h = (2 * s[a, 3]) ** 2 * ah
        obj = s[a, 4]
        cls_prob = s[a, 5:]                        # (nc, gh, gw)
        best = np.argmax(cls_prob, axis=0)
        best_p = np.take_along_axis(cls_prob, best[None], axis=0)[0]
        conf = obj * best_p
        keep = np.argwhere(conf >= conf_thresh)
        for (j, i) in keep:
            out.append(Detection(
                Box(float(cx[j, i]), float(cy[j, i]), float(w[j, i]), float(h[j, i]),
                    class_id=int(best[j, i])),
                score=float(conf[j, i])))
    return out


def encode_box(box: Box, spec: NetworkSpec, stride: int, row: int, col: int,
               anchor_index: int) -> tuple[float, float, float, float]:
    """Inverse of the decode parameterization for one assigned slot.

    Valid when the center offset lies in (-0.5, 1.5) relative to the cell
    and each extent is under 4x its anchor.
    """
    aw, ah = spec.anchors[stride][anchor_index]
    ox = box.cx / stride - col
    oy = box.cy / stride - row
    for off, name in ((ox, "x"), (oy, "y")):
        if not (-0.5 < off < 1.5):
            raise ValueError(f"{name} offset {off:.3f} outside the decodable range (-0.5, 1.5)")
    for ext, a, name in ((box.w, aw, "w"), (box.h, ah, "h")):
        if not (0 < ext < 4 * a):
            raise ValueError(f"{name}={ext} outside (0, 4*anchor={4 * a})")
    return (_logit((ox + 0.5) / 2), _logit((oy + 0.5) / 2),
            _logit(math.sqrt(box.w / aw) / 2), _logit(math.sqrt(box.h / ah) / 2))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))
