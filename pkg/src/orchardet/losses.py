"""Training losses: binary cross entropy, complete-IoU box regression,
and the three-part weighted total."""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .boxes import CIOU_FORMS, GroundTruth
from .network import NetworkSpec
from .targets import AssignedTargets, assign_targets

DEFAULT_COEFS = (0.05, 0.5, 1.0)   # box, cls, obj
# per-level objectness weights, ordered by ascending stride
OBJ_BALANCE = {3: (4.0, 1.0, 0.4), 4: (4.0, 1.0, 0.4, 0.1)}


def bce_loss(probs, targets) -> float:
    """Mean binary cross entropy over flat probability/target pairs.

    Probabilities must lie strictly inside (0,1); internally the inputs
    are mapped to logits and evaluated in the stable softplus form with
    logits clamped to |z| <= 30.
    """
    p = np.asarray(probs, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("bce_loss: empty input")
    if p.shape != t.shape:
        raise ValueError(f"bce_loss: {p.shape} predictions vs {t.shape} targets")
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("bce_loss: predictions must lie strictly inside (0,1)")
    z = np.clip(np.log(p / (1 - p)), -30, 30)
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return float(per.mean())


def combine_losses(box: float, cls: float, obj: float,
                   coefs: tuple[float, float, float] = DEFAULT_COEFS) -> float:
    """Weighted sum of the three loss components."""
    cb, cc, co = coefs
    if cb < 0 or cc < 0 or co < 0:
        raise ValueError(f"loss coefficients must be non-negative, got {coefs}")
    return cb * box + cc * cls + co * obj


def _const(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype))


def ciou_loss_terms(pxy: Tensor, pwh: Tensor, target_xywh: np.ndarray,
                    form: str = "squared",
                    alpha_override: np.ndarray | None = None
                    ) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Per-slot complete-IoU loss, differentiable in the predictions.

    ``pxy``/``pwh`` have shape (1,2,M,1); targets are an (M,4) constant.
    Returns the (1,1,M,1) loss tensor, the detached complete-IoU values
    (used for IoU-scaled objectness targets), and the aspect trade-off
    alpha that was applied. Alpha is a constant during backward;
    ``alpha_override`` pins it explicitly across calls (the
    finite-difference harness needs that).
    """
    if form not in CIOU_FORMS:
        raise ValueError(f"unknown ciou form {form!r}; expected one of {CIOU_FORMS}")
    dt = pxy.dtype
    t = np.asarray(target_xywh, dtype=np.float64)
    m = t.shape[0]
    txy = t[:, 0:2].T[None, :, :, None]
    twh = t[:, 2:4].T[None, :, :, None]
    t1 = txy - twh / 2
    t2 = txy + twh / 2
    t_area = (twh[:, 0:1] * twh[:, 1:2])
    t_atan = np.arctan(twh[:, 0:1] / twh[:, 1:2])

    half = ad.scale(pwh, 0.5)
    p1 = ad.sub(pxy, half)
    p2 = ad.add(pxy, half)
    inter_lt = ad.maximum(p1, _const(t1, dt))
    inter_rb = ad.minimum(p2, _const(t2, dt))
    inter_wh = ad.relu(ad.sub(inter_rb, inter_lt))
    inter = ad.mul(ad.slice_channels(inter_wh, 0, 1), ad.slice_channels(inter_wh, 1, 2))
    p_area = ad.mul(ad.slice_channels(pwh, 0, 1), ad.slice_channels(pwh, 1, 2))
    union = ad.sub(ad.add(p_area, _const(t_area, dt)), inter)
    overlap = ad.div(inter, union)

    diff = ad.sub(pxy, _const(txy, dt))
    dx = ad.slice_channels(diff, 0, 1)
    dy = ad.slice_channels(diff, 1, 2)
    dist2 = ad.add(ad.mul(dx, dx), ad.mul(dy, dy))
    enc_wh = ad.sub(ad.maximum(p2, _const(t2, dt)), ad.minimum(p1, _const(t1, dt)))
    ew = ad.slice_channels(enc_wh, 0, 1)
    eh = ad.slice_channels(enc_wh, 1, 2)
    diag2 = ad.add(ad.mul(ew, ew), ad.mul(eh, eh))

    p_atan = ad.arctan(ad.div(ad.slice_channels(pwh, 0, 1), ad.slice_channels(pwh, 1, 2)))
    a_diff = ad.sub(p_atan, _const(t_atan, dt))
    v = ad.scale(ad.mul(a_diff, a_diff), 4.0 / math.pi ** 2)

    if alpha_override is not None:
        alpha = np.asarray(alpha_override, dtype=np.float64).reshape(1, 1, m, 1)
    else:
        v_det = v.data.astype(np.float64)
        iou_det = overlap.data.astype(np.float64)
        denom = (1.0 - iou_det) + v_det
        alpha = np.where(denom == 0, 0.0, v_det / np.where(denom == 0, 1.0, denom))

    if form == "squared":
        pen = ad.div(dist2, diag2)
    else:
        pen = ad.div(ad.sqrt(dist2), ad.sqrt(diag2))

    one_minus_iou = ad.add_scalar(ad.neg(overlap), 1.0)
    loss = ad.add(ad.add(one_minus_iou, pen), ad.mul(_const(alpha, dt), v))

    ciou_value = (overlap.data.astype(np.float64)
                  - pen.data.astype(np.float64)
                  - alpha * v.data.astype(np.float64))
    return loss, ciou_value.reshape(-1), alpha


class DetectionLoss:
    """Composite training loss over all head levels.

    box: mean complete-IoU loss at assigned slots (summed over levels)
    cls: mean BCE of class logits against one-hot targets at those slots
    obj: per-level mean BCE of objectness against a grid that is zero
         except at assigned slots (IoU-scaled there when enabled),
         weighted by a per-level balance and summed.
    """

    def __init__(self, spec: NetworkSpec, coefs=DEFAULT_COEFS, ciou_form: str = "squared",
                 iou_scaled_obj: bool = True, obj_balance: tuple[float, ...] | None = None,
                 freeze_detached: bool = False):
        if any(c < 0 for c in coefs):
            raise ValueError(f"loss coefficients must be non-negative, got {coefs}")
        if ciou_form not in CIOU_FORMS:
            raise ValueError(f"unknown ciou form {ciou_form!r}")
        self.spec = spec
        self.coefs = tuple(float(c) for c in coefs)
        self.ciou_form = ciou_form
        self.iou_scaled_obj = iou_scaled_obj
        nl = len(spec.head_strides)
        self.obj_balance = tuple(obj_balance) if obj_balance is not None else OBJ_BALANCE[nl]
        if len(self.obj_balance) != nl:
            raise ValueError(f"{nl} head levels but {len(self.obj_balance)} balance weights")
        # The aspect trade-off alpha and the IoU-scaled objectness targets
        # are constants during backward. freeze_detached pins them at their
        # first-call values so finite differences see the same constants
        # the analytic gradient does (the gradient-check harness needs it).
        self.freeze_detached = freeze_detached
        self._frozen: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __call__(self, head_outputs: list[Tensor], truths: list[GroundTruth],
                 image_size: tuple[int, int],
                 targets: AssignedTargets | None = None) -> tuple[Tensor, dict[str, float]]:
        spec = self.spec
        if targets is None:
            targets = assign_targets(truths, spec, image_size)
        na, nc = spec.num_anchors, spec.num_classes
        per = 5 + nc
        dt = head_outputs[0].dtype

        box_total: Tensor | None = None
        cls_total: Tensor | None = None
        obj_total: Tensor | None = None

        for li, (raw, lv) in enumerate(zip(head_outputs, targets.levels)):
            n = raw.shape[0]
            gh, gw = raw.shape[2], raw.shape[3]
            if raw.shape[1] != na * per or (gh, gw) != (lv.grid_h, lv.grid_w):
                raise ValueError(f"head output shape {raw.shape} does not match level "
                                 f"(stride {lv.stride}, grid {lv.grid_h}x{lv.grid_w})")
            r = ad.reshape(raw, (n * na, per, gh, gw))
            tobj = np.zeros((n * na, 1, gh, gw), dtype=dt)

            if len(lv):
                n_idx = lv.image * na + lv.anchor
                slots = ad.gather_cells(r, n_idx, lv.row, lv.col)      # (1, per, M, 1)
                txy_raw = ad.slice_channels(slots, 0, 2)
                twh_raw = ad.slice_channels(slots, 2, 4)
                cell = np.stack([lv.col, lv.row]).astype(np.float64)[None, :, :, None]
                anchors = np.array([spec.anchors[lv.stride][a] for a in lv.anchor],
                                   dtype=np.float64).T[None, :, :, None]
                pxy = ad.scale(ad.add(ad.add_scalar(ad.scale(ad.sigmoid(txy_raw), 2.0), -0.5),
                                      _const(cell, dt)), float(lv.stride))
                # keep decoded extents strictly positive in float32
                swh = ad.scale(ad.sigmoid(ad.clamp(twh_raw, -12.0, 12.0)), 2.0)
                pwh = ad.mul(ad.mul(swh, swh), _const(anchors, dt))
                alpha_override = self._frozen[li][0] if li in self._frozen else None
                loss_slots, ciou_vals, alpha = ciou_loss_terms(
                    pxy, pwh, lv.box, form=self.ciou_form, alpha_override=alpha_override)
                lbox = ad.tmean(loss_slots)
                box_total = lbox if box_total is None else ad.add(box_total, lbox)

                cls_logits = ad.slice_channels(slots, 5, per)
                onehot = np.zeros((1, nc, len(lv), 1), dtype=dt)
                onehot[0, lv.cls, np.arange(len(lv)), 0] = 1.0
                lcls = ad.tmean(ad.bce_with_logits(cls_logits, onehot))
                cls_total = lcls if cls_total is None else ad.add(cls_total, lcls)

                if li in self._frozen:
                    slot_obj = self._frozen[li][1]
                elif self.iou_scaled_obj:
                    slot_obj = np.clip(ciou_vals, 0.0, 1.0).astype(dt)
                else:
                    slot_obj = np.ones(len(lv), dtype=dt)
                if self.freeze_detached and li not in self._frozen:
                    self._frozen[li] = (alpha, slot_obj)
                tobj[n_idx, 0, lv.row, lv.col] = slot_obj

            obj_logits = ad.slice_channels(r, 4, 5)
            lobj = ad.scale(ad.tmean(ad.bce_with_logits(obj_logits, tobj)),
                            self.obj_balance[li])
            obj_total = lobj if obj_total is None else ad.add(obj_total, lobj)

        zero = Tensor(np.zeros((1, 1, 1, 1), dtype=dt))
        box_total = box_total if box_total is not None else zero
        cls_total = cls_total if cls_total is not None else zero
        assert obj_total is not None
        cb, cc, co = self.coefs
        total = ad.add(ad.add(ad.scale(box_total, cb), ad.scale(cls_total, cc)),
                       ad.scale(obj_total, co))
        parts = {"box": box_total.item(), "cls": cls_total.item(),
                 "obj": obj_total.item(), "total": total.item()}
        return total, parts
