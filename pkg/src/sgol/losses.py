"""Set-prediction training objectives: classification, box, focal and DICE terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import giou_t, l1_box_t, to_xyxy, to_xyxy_t
from .matching import Assignment, LossWeights, cost_matrix, hungarian
from .structures import DetectionOutput, Targets
from .tensor import Tensor


@dataclass
class LossBreakdown:
    total: Tensor
    classification: float = 0.0
    box_giou: float = 0.0
    box_l1: float = 0.0
    mask_focal: float = 0.0
    mask_dice: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "total": float(self.total.data),
            "classification": self.classification,
            "box_giou": self.box_giou,
            "box_l1": self.box_l1,
            "mask_focal": self.mask_focal,
            "mask_dice": self.mask_dice,
        }


def _target_index(assignment: Assignment, n_queries: int, fill: int, labels=None) -> tuple[np.ndarray, np.ndarray]:
    target = np.full(n_queries, fill, dtype=int)
    is_obj = np.zeros(n_queries, dtype=bool)
    for r, q in enumerate(assignment.cols):
        if not 0 <= q < n_queries:
            raise IndexError(f"assigned column {q} outside {n_queries} queries")
        target[q] = 0 if labels is None else labels[r]
        is_obj[q] = True
    return target, is_obj


def classification_loss(obj_logits: Tensor, assignment: Assignment, eos_weight: float = 0.1, labels=None) -> Tensor:
    """Mean over queries of -log p(target), no-object terms scaled by ``eos_weight``.

    Binary logits are ordered (object, no-object). For multi-class logits the
    last column is no-object and ``labels[r]`` is the class of row ``r``.
    """
    n, k = obj_logits.shape
    no_obj = 1 if labels is None else k - 1
    target, is_obj = _target_index(assignment, n, no_obj, labels)
    logp = T.log_softmax(obj_logits, -1)[np.arange(n), target]
    w = np.where(is_obj, 1.0, eos_weight)
    return -(logp * w).sum() / n


def box_loss(pred: Tensor, gt, w: LossWeights = LossWeights()) -> Tensor:
    """lambda_iou * (1 - GIoU) + lambda_l1 * L1 for center-form boxes (summed over leading axes)."""
    gt = np.asarray(gt, dtype=np.float64)
    g = giou_t(to_xyxy_t(pred), to_xyxy(gt))
    return (w.lambda_iou * (1.0 - g) + w.lambda_l1 * l1_box_t(pred, gt)).sum()


def focal_loss(logits: Tensor, targets, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Mean over pixels of -alpha_t (1 - p_t)^gamma log p_t."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise T.ShapeError(f"focal loss shapes differ: {logits.shape} vs {targets.shape}")
    return _focal_terms(logits, targets, alpha, gamma).mean()


def _focal_terms(logits: Tensor, targets: np.ndarray, alpha: float, gamma: float) -> Tensor:
    signed = T.where(targets > 0.5, logits, -logits)  # p_t = sigmoid(signed)
    log_pt = T.log_sigmoid(signed)
    pt = T.sigmoid(signed)
    alpha_t = np.where(targets > 0.5, alpha, 1.0 - alpha)
    mod = (1.0 - pt) ** gamma if gamma != 0 else 1.0
    return -(log_pt * mod * alpha_t)


def dice_loss(mask_logits: Tensor, target) -> Tensor:
    """1 - (2 sum(m s) + 1) / (sum(s) + sum(m) + 1) with s = sigmoid(logits), summed over pixels."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != mask_logits.shape:
        raise T.ShapeError(f"dice loss shapes differ: {mask_logits.shape} vs {target.shape}")
    s = T.sigmoid(mask_logits)
    num = 2.0 * (s * target).sum() + 1.0
    den = s.sum() + float(target.sum()) + 1.0
    return 1.0 - num / den


def _object_probs(out: DetectionOutput, targets: Targets) -> np.ndarray:
    if out.class_logits is not None:
        p = _softmax_np(out.class_logits.data)
        return p[:, targets.labels].T if len(targets) else np.zeros((0, p.shape[0]))
    return _softmax_np(out.obj_logits.data)[:, 0]


def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def match(out: DetectionOutput, targets: Targets, w: LossWeights = LossWeights()) -> Assignment:
    """Optimal assignment of ground truth to queries; no gradient."""
    if len(targets) == 0:
        return Assignment((), 0.0)
    c = cost_matrix(_object_probs(out, targets), out.boxes.data, targets.boxes, w)
    return hungarian(c)


def hungarian_loss(
    out: DetectionOutput,
    targets: Targets,
    w: LossWeights = LossWeights(),
    assignment: Assignment | None = None,
    masks: bool = True,
) -> LossBreakdown:
    """Matched set loss for one image; the assignment is treated as a constant."""
    if assignment is None:
        assignment = match(out, targets, w)
    multi = out.class_logits is not None
    logits = out.class_logits if multi else out.obj_logits
    labels = targets.labels if multi else None
    cls = classification_loss(logits, assignment, w.eos_weight, labels)
    total = cls
    norm = max(1, len(targets))
    parts = {"classification": float(cls.data)}
    if len(targets):
        q = np.array(assignment.cols)
        pred = out.boxes[q]
        g = giou_t(to_xyxy_t(pred), to_xyxy(targets.boxes))
        l_giou = (1.0 - g).sum() * (w.lambda_iou / norm)
        l_l1 = l1_box_t(pred, targets.boxes).sum() * (w.lambda_l1 / norm)
        total = total + l_giou + l_l1
        parts["box_giou"] = float(l_giou.data)
        parts["box_l1"] = float(l_l1.data)
        if masks and out.mask_logits is not None and targets.masks is not None:
            ml = out.mask_logits[q]
            tm = targets.masks
            l_focal = T.concat(
                [focal_loss(ml[i], tm[i], w.focal_alpha, w.focal_gamma).reshape(1) for i in range(len(q))]
            ).sum() * (w.lambda_focal / norm)
            l_dice = T.concat([dice_loss(ml[i], tm[i]).reshape(1) for i in range(len(q))]).sum() * (
                w.lambda_dice / norm
            )
            total = total + l_focal + l_dice
            parts["mask_focal"] = float(l_focal.data)
            parts["mask_dice"] = float(l_dice.data)
    return LossBreakdown(total=total, **parts)


def batch_loss(
    out: DetectionOutput, targets: list[Targets], w: LossWeights = LossWeights(), masks: bool = True
) -> tuple[Tensor, dict[str, float]]:
    """Mean of per-image Hungarian losses over a batched output (leading axis B).

    Assignments are solved per image; the loss terms are then gathered into
    single batched ops, weighted so the result equals the per-image mean.
    """
    b, n = out.boxes.shape[:2]
    if len(targets) != b:
        raise ValueError(f"{len(targets)} targets for a batch of {b}")
    multi = out.class_logits is not None
    logits = out.class_logits if multi else out.obj_logits
    no_obj = logits.shape[-1] - 1 if multi else 1
    cls_target = np.full((b, n), no_obj, dtype=int)
    cls_w = np.full((b, n), w.eos_weight / (n * b))
    rows_b, rows_q, row_w, gt_boxes, gt_masks = [], [], [], [], []
    for i, tgt in enumerate(targets):
        assignment = match(out.item(i), tgt, w)
        q = np.array(assignment.cols, dtype=int)
        if len(q) and (q.min() < 0 or q.max() >= n):
            raise IndexError(f"assigned column outside {n} queries")
        cls_target[i, q] = tgt.labels if multi else 0
        cls_w[i, q] = 1.0 / (n * b)
        rows_b.append(np.full(len(q), i))
        rows_q.append(q)
        row_w.append(np.full(len(q), 1.0 / (max(1, len(tgt)) * b)))
        gt_boxes.append(np.asarray(tgt.boxes, dtype=np.float64).reshape(-1, 4))
        if tgt.masks is not None:
            gt_masks.append(tgt.masks)
    bi, qi = np.arange(b)[:, None], np.arange(n)[None, :]
    logp = T.log_softmax(logits, -1)[bi, qi, cls_target]
    cls = -(logp * cls_w).sum()
    total = cls
    parts = {"classification": float(cls.data), "box_giou": 0.0, "box_l1": 0.0, "mask_focal": 0.0, "mask_dice": 0.0}
    rb, rq, rw = np.concatenate(rows_b), np.concatenate(rows_q), np.concatenate(row_w)
    if len(rb):
        pred = out.boxes[rb, rq]
        gt = np.concatenate(gt_boxes)
        g = giou_t(to_xyxy_t(pred), to_xyxy(gt))
        l_giou = ((1.0 - g) * rw).sum() * w.lambda_iou
        l_l1 = (l1_box_t(pred, gt) * rw).sum() * w.lambda_l1
        total = total + l_giou + l_l1
        parts["box_giou"] = float(l_giou.data)
        parts["box_l1"] = float(l_l1.data)
        if masks and out.mask_logits is not None and len(gt_masks) == b:
            ml = out.mask_logits[rb, rq]
            tm = np.concatenate(gt_masks).astype(np.float64)
            l_focal = (_focal_terms(ml, tm, w.focal_alpha, w.focal_gamma).mean((-2, -1)) * rw).sum() * w.lambda_focal
            s = T.sigmoid(ml)
            dice = 1.0 - (2.0 * (s * tm).sum((-2, -1)) + 1.0) / (s.sum((-2, -1)) + tm.sum((-2, -1)) + 1.0)
            l_dice = (dice * rw).sum() * w.lambda_dice
            total = total + l_focal + l_dice
            parts["mask_focal"] = float(l_focal.data)
            parts["mask_dice"] = float(l_dice.data)
    parts = {"total": float(total.data), **parts}
    return total, parts
