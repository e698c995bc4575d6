"""Axis-aligned box geometry: IoU and the complete-IoU loss.

Scalar reference implementations used by evaluation, matching and tests;
the differentiable training-path variant lives in losses.py.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

APPLE, BLOCK = 0, 1
CLASS_NAMES = {APPLE: "apple", BLOCK: "block"}

CIOU_FORMS = ("squared", "linear-ratio")


@dataclass(frozen=True)
class Box:
    """Center/size rectangle; positive extents, class in {0 apple, 1 block}."""

    cx: float
    cy: float
    w: float
    h: float
    class_id: int = APPLE

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @property
    def x1(self) -> float:
        return self.cx - self.w / 2

    @property
    def y1(self) -> float:
        return self.cy - self.h / 2

    @property
    def x2(self) -> float:
        return self.cx + self.w / 2

    @property
    def y2(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    @staticmethod
    def from_corners(x1: float, y1: float, x2: float, y2: float, class_id: int = APPLE) -> "Box":
        return Box((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1, class_id)

    def scaled(self, k: float) -> "Box":
        return Box(self.cx * k, self.cy * k, self.w * k, self.h * k, self.class_id)


@dataclass(frozen=True)
class GroundTruth:
    """A labelled box tied to its source image."""

    box: Box
    image_id: int = 0


@dataclass(frozen=True)
class Detection:
    """A predicted box with its confidence score."""

    box: Box
    score: float

    @property
    def class_id(self) -> int:
        return self.box.class_id


def iou(a: Box, b: Box) -> float:
    """Intersection over union; exact for axis-aligned rectangles."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def ciou_loss(pred: Box, gt: Box, form: str = "squared") -> float:
    """Complete-IoU loss: (1 - IoU) + center-distance penalty + aspect term.

    The center-distance penalty divides the distance between box centers
    by the diagonal of the smallest enclosing box. ``form='squared'``
    squares that ratio (the usual choice); ``form='linear-ratio'`` keeps
    it linear. The aspect term is alpha*v with
    v = (4/pi^2) (atan(w_gt/h_gt) - atan(w/h))^2 and
    alpha = v / ((1 - IoU) + v), set to 0 at the IoU=1, v=0 singularity.
    """
    if form not in CIOU_FORMS:
        raise ValueError(f"unknown ciou form {form!r}; expected one of {CIOU_FORMS}")
    overlap = iou(pred, gt)
    v = (4.0 / math.pi ** 2) * (math.atan(gt.w / gt.h) - math.atan(pred.w / pred.h)) ** 2
    denom = (1.0 - overlap) + v
    alpha = 0.0 if denom == 0 else v / denom
    d = math.hypot(pred.cx - gt.cx, pred.cy - gt.cy)
    cw = max(pred.x2, gt.x2) - min(pred.x1, gt.x1)
    ch = max(pred.y2, gt.y2) - min(pred.y1, gt.y1)
    diag = math.hypot(cw, ch)
    ratio = 0.0 if diag == 0 else d / diag
    if form == "squared":
        ratio = ratio * ratio
    return (1.0 - overlap) + ratio + alpha * v
