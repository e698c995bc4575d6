"""Post-processing and the evaluation protocol: NMS, greedy matching,
precision/recall/F1, average precision, per-class count accuracy."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .boxes import Box, Detection, GroundTruth, iou

log = logging.getLogger(__name__)

NMS_CONF_DEFAULT = 0.25
NMS_IOU_DEFAULT = 0.45
MATCH_IOU_DEFAULT = 0.5


def nms(dets: list[Detection], iou_thresh: float = NMS_IOU_DEFAULT,
        conf_thresh: float = NMS_CONF_DEFAULT) -> list[Detection]:
    """Greedy class-aware non-maximum suppression.

    Result is confidence-sorted; no two survivors of the same class
    overlap above ``iou_thresh``; different classes never suppress each
    other.
    """
    if not (0 <= iou_thresh <= 1 and 0 <= conf_thresh <= 1):
        raise ValueError(f"thresholds must lie in [0,1], got iou={iou_thresh}, conf={conf_thresh}")
    pool = sorted((d for d in dets if d.score >= conf_thresh),
                  key=lambda d: -d.score)
    kept: list[Detection] = []
    for cand in pool:
        if all(k.class_id != cand.class_id or iou(k.box, cand.box) <= iou_thresh
               for k in kept):
            kept.append(cand)
    return kept


@dataclass
class MatchResult:
    """Confidence-ordered TP/FP flags for one image+class pool."""

    scores: list[float] = field(default_factory=list)
    is_tp: list[bool] = field(default_factory=list)
    matched_truth: list[int | None] = field(default_factory=list)
    unmatched_truths: int = 0


def match_detections(dets: list[Detection], truths: list[GroundTruth],
                     iou_thresh: float = MATCH_IOU_DEFAULT) -> MatchResult:
    """Greedy matching: scan detections by descending confidence, each one
    takes the highest-IoU still-unmatched truth at or above the threshold
    (ties broken by truth index); otherwise it is a false positive."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    used: set[int] = set()
    res = MatchResult()
    for i in order:
        d = dets[i]
        best_j, best_iou = None, iou_thresh
        for j, t in enumerate(truths):
            if j in used:
                continue
            o = iou(d.box, t.box)
            if o > best_iou or (o == best_iou and o >= iou_thresh and best_j is None):
                best_j, best_iou = j, o
        res.scores.append(d.score)
        if best_j is not None:
            used.add(best_j)
            res.is_tp.append(True)
            res.matched_truth.append(best_j)
        else:
            res.is_tp.append(False)
            res.matched_truth.append(None)
    res.unmatched_truths = len(truths) - len(used)
    return res


def pr_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and F1 from aggregate counts.

    F1 is 0 by convention when precision + recall is 0. Rejects the
    degenerate case of zero truths and zero detections.
    """
    if tp + fp + fn == 0:
        raise ValueError("pr_f1 undefined with zero truths and zero detections")
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f1


@dataclass
class PRCurve:
    """Cumulative-scan precision/recall points with their thresholds."""

    recalls: list[float]
    precisions: list[float]
    thresholds: list[float]
    n_truths: int


def pr_curve(scores: list[float], is_tp: list[bool], n_truths: int) -> PRCurve:
    """Build the P-R scan from pooled (score, TP/FP) pairs."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    recalls, precisions, thresholds = [], [], []
    tp = fp = 0
    for i in order:
        if is_tp[i]:
            tp += 1
        else:
            fp += 1
        recalls.append(tp / n_truths if n_truths else 0.0)
        precisions.append(tp / (tp + fp))
        thresholds.append(scores[i])
    return PRCurve(recalls, precisions, thresholds, n_truths)


def average_precision(curve: PRCurve) -> float | None:
    """Area under the precision envelope over the recall staircase.

    All-point interpolation: precision is made monotone non-increasing
    from the right, then the exact staircase area is accumulated over
    recall increments. Returns None when the class has no ground truths.
    """
    if curve.n_truths == 0:
        log.warning("average_precision: no ground truths for this class; AP undefined")
        return None
    if not curve.recalls:
        return 0.0
    n = len(curve.recalls)
    envelope = [0.0] * n
    best = 0.0
    for i in range(n - 1, -1, -1):
        best = max(best, curve.precisions[i])
        envelope[i] = best
    ap = 0.0
    prev_r = 0.0
    for i in range(n):
        dr = curve.recalls[i] - prev_r
        if dr > 0:
            ap += dr * envelope[i]
            prev_r = curve.recalls[i]
    return ap


def evaluate_detections(detections: dict[int, list[Detection]],
                        truths: dict[int, list[GroundTruth]],
                        num_classes: int,
                        iou_thresh: float = MATCH_IOU_DEFAULT
                        ) -> dict[int, PRCurve]:
    """Per-class P-R curves over a whole image set.

    ``detections``/``truths`` map image id to that image's lists; matching
    runs per image and class, then pools globally by confidence.
    """
    curves: dict[int, PRCurve] = {}
    image_ids = sorted(set(detections) | set(truths))
    for c in range(num_classes):
        scores: list[float] = []
        flags: list[bool] = []
        n_truth = 0
        for img in image_ids:
            dets_c = [d for d in detections.get(img, []) if d.class_id == c]
            tr_c = [t for t in truths.get(img, []) if t.box.class_id == c]
            n_truth += len(tr_c)
            m = match_detections(dets_c, tr_c, iou_thresh)
            scores.extend(m.scores)
            flags.extend(m.is_tp)
        curves[c] = pr_curve(scores, flags, n_truth)
    return curves


def mean_average_precision(curves: dict[int, PRCurve]) -> tuple[float | None, dict[int, float | None]]:
    """mAP = mean of defined per-class APs; classes without truths are
    excluded (with a warning from average_precision)."""
    per_class = {c: average_precision(curve) for c, curve in curves.items()}
    defined = [v for v in per_class.values() if v is not None]
    return (sum(defined) / len(defined) if defined else None), per_class


def accuracy_count(dets: list[Detection], truths: list[GroundTruth],
                   num_classes: int) -> dict[int, tuple[int, int, float | None]]:
    """Per-class (truth count, detection count, detections/truths ratio).

    The ratio may exceed 1 under over-detection and is None when the
    class has no truths.
    """
    out = {}
    for c in range(num_classes):
        nt = sum(1 for t in truths if t.box.class_id == c)
        nd = sum(1 for d in dets if d.class_id == c)
        out[c] = (nt, nd, nd / nt if nt else None)
    return out


def write_pr_table(path, curve: PRCurve) -> None:
    """Plain-text P-R table: one 'recall precision threshold' row per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# recall precision threshold\n")
        for r, p, t in zip(curve.recalls, curve.precisions, curve.thresholds):
            fh.write(f"{r:.6f} {p:.6f} {t:.6f}\n")
