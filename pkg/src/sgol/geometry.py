"""Box algebra on normalized boxes.

Boxes are arrays whose last axis has four entries, either center form
``(cx, cy, w, h)`` or corner form ``(x0, y0, x1, y1)``. The ``*_t`` variants
take :class:`~sgol.tensor.Tensor` inputs and are differentiable.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def to_xyxy(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    cx, cy, w, h = np.moveaxis(b, -1, 0)
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def to_cxcywh(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    x0, y0, x1, y1 = np.moveaxis(b, -1, 0)
    return np.stack([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], axis=-1)


def _area(b: np.ndarray) -> np.ndarray:
    return (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])


def _inter_union(a: np.ndarray, b: np.ndarray):
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    return inter, _area(a) + _area(b) - inter


def iou(a, b) -> np.ndarray | float:
    """IoU of corner-form boxes (broadcasting); 0 when the union has no area."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    inter, union = _inter_union(a, b)
    out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def giou(a, b) -> np.ndarray | float:
    """Generalized IoU of corner-form boxes; 0 for zero-area union or hull."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    inter, union = _inter_union(a, b)
    cw = np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])
    ch = np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])
    hull = cw * ch
    ok = (union > 0) & (hull > 0)
    safe_u = np.where(ok, union, 1.0)
    safe_c = np.where(ok, hull, 1.0)
    out = np.where(ok, inter / safe_u - (safe_c - safe_u) / safe_c, 0.0)
    return float(out) if out.ndim == 0 else out


def pairwise_giou(a, b) -> np.ndarray:
    """(n, m) GIoU matrix between corner-form box lists."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.asarray(giou(a[:, None, :], b[None, :, :]))


def pairwise_iou(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.asarray(iou(a[:, None, :], b[None, :, :]))


def l1_box(a, b) -> np.ndarray | float:
    """Sum of absolute center-form coordinate differences."""
    out = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def mask_iou(a, b) -> float:
    """IoU of two binary masks; 1 when both are empty."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def clamp_xyxy(b) -> np.ndarray:
    return np.clip(np.asarray(b, dtype=np.float64), 0.0, 1.0)


# --- differentiable variants ----------------------------------------------


def to_xyxy_t(b: Tensor) -> Tensor:
    cx, cy, w, h = (b[..., i : i + 1] for i in range(4))
    return T.concat([cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5], axis=-1)


def giou_t(a: Tensor, b) -> Tensor:
    """GIoU for corner-form tensors of shape (..., 4); zero value and gradient when degenerate."""
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=np.float64))
    ax0, ay0, ax1, ay1 = (a[..., i] for i in range(4))
    bx0, by0, bx1, by1 = (b[..., i] for i in range(4))
    iw = T.relu(T.minimum(ax1, bx1) - T.maximum(ax0, bx0))
    ih = T.relu(T.minimum(ay1, by1) - T.maximum(ay0, by0))
    inter = iw * ih
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    union = area_a + area_b - inter
    hull = (T.maximum(ax1, bx1) - T.minimum(ax0, bx0)) * (T.maximum(ay1, by1) - T.minimum(ay0, by0))
    ok = (union.data > 0) & (hull.data > 0)
    safe_u = T.where(ok, union, 1.0)
    safe_c = T.where(ok, hull, 1.0)
    val = inter / safe_u - (safe_c - safe_u) / safe_c
    return T.where(ok, val, 0.0)


def l1_box_t(a: Tensor, b) -> Tensor:
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=np.float64))
    return T.abs_(a - b).sum(axis=-1)
