"""Minimum-cost assignment of ground-truth rows to prediction columns."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .geometry import l1_box, pairwise_giou, to_xyxy

_TIE_RTOL = 1e-12
BRUTE_FORCE_MAX_ROWS = 8


@dataclass(frozen=True)
class Assignment:
    """``cols[r]`` is the prediction slot assigned to ground-truth row ``r``."""

    cols: tuple[int, ...]
    cost: float

    def as_dict(self) -> dict[int, int]:
        return dict(enumerate(self.cols))

    def __len__(self) -> int:
        return len(self.cols)


@dataclass(frozen=True)
class LossWeights:
    lambda_iou: float = 2.0
    lambda_l1: float = 5.0
    eos_weight: float = 0.1
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    lambda_focal: float = 1.0
    lambda_dice: float = 1.0

    def __post_init__(self):
        for k, v in vars(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be non-negative")


def match_cost(pred_obj_prob: float, pred_box, gt_box, weights: LossWeights = LossWeights()) -> float:
    """Pair cost: -p(object) + lambda_iou*(1 - GIoU) + lambda_l1*L1, center-form boxes."""
    g = pairwise_giou(to_xyxy(np.asarray(pred_box))[None], to_xyxy(np.asarray(gt_box))[None])[0, 0]
    return float(-pred_obj_prob + weights.lambda_iou * (1.0 - g) + weights.lambda_l1 * l1_box(pred_box, gt_box))


def cost_matrix(pred_probs, pred_boxes, gt_boxes, weights: LossWeights = LossWeights()) -> np.ndarray:
    """(n_gt, N) matrix of :func:`match_cost`.

    ``pred_probs`` is either (N,) object probabilities, or (n_gt, N) when the
    probability depends on the ground-truth class.
    """
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    probs = np.asarray(pred_probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = np.broadcast_to(probs[None, :], (len(gt_boxes), len(pred_boxes)))
    g = pairwise_giou(to_xyxy(gt_boxes), to_xyxy(pred_boxes))
    l1 = np.abs(gt_boxes[:, None, :] - pred_boxes[None, :, :]).sum(-1)
    return -probs + weights.lambda_iou * (1.0 - g) + weights.lambda_l1 * l1


def _check(cost) -> np.ndarray:
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if c.shape[0] > c.shape[1]:
        raise ValueError(f"more rows than columns: {c.shape}")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix has non-finite entries")
    return c


def _row_sum(c: np.ndarray, cols) -> float:
    total = 0.0
    for r, j in enumerate(cols):
        total += c[r, j]
    return float(total)


def _solve(c: np.ndarray) -> list[int]:
    """Shortest augmenting path with potentials, O(n^2 m) for n <= m."""
    n, m = c.shape
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    owner = [0] * (m + 1)  # owner[j]: 1-based row holding column j, 0 = free
    way = [0] * (m + 1)
    rows = c.tolist()
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = owner[j0]
            row = rows[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = [0] * n
    for j in range(1, m + 1):
        if owner[j]:
            cols[owner[j] - 1] = j - 1
    return cols


def _optimal_value(c: np.ndarray) -> float:
    if c.shape[0] == 0:
        return 0.0
    return _row_sum(c, _solve(c))


def hungarian(cost) -> Assignment:
    """Globally optimal injective row-to-column assignment.

    Among optimal assignments the lexicographically smallest column sequence
    is returned: rows are fixed one at a time to the smallest column that
    still admits an optimal completion.
    """
    c = _check(cost)
    n, m = c.shape
    if n == 0:
        return Assignment((), 0.0)
    cols = _solve(c)
    best = _row_sum(c, cols)
    tol = _TIE_RTOL * max(1.0, abs(best))
    prefix: list[int] = []
    prefix_cost = 0.0
    for r in range(n):
        for j in range(cols[r]):
            if j in prefix:
                continue
            rest_cols = [k for k in range(m) if k not in prefix and k != j]
            sub = c[r + 1 :][:, rest_cols]
            sub_cols = _solve(sub) if sub.shape[0] else []
            total = prefix_cost + c[r, j] + _row_sum(sub, sub_cols)
            if total <= best + tol:
                cols = prefix + [j] + [rest_cols[k] for k in sub_cols]
                break
        prefix.append(cols[r])
        prefix_cost += c[r, cols[r]]
    return Assignment(tuple(cols), _row_sum(c, cols))


def brute_force_assignment(cost) -> Assignment:
    """Exhaustive minimum over all injections, same tie rule as :func:`hungarian`."""
    c = _check(cost)
    n, m = c.shape
    if n > BRUTE_FORCE_MAX_ROWS:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_ROWS} rows, got {n}")
    best_cols: tuple[int, ...] = ()
    best = float("inf")
    # permutations() yields injections in lexicographic order
    for cols in itertools.permutations(range(m), n):
        total = _row_sum(c, cols)
        if total < best - _TIE_RTOL * max(1.0, abs(total)):
            best, best_cols = total, cols
    if n == 0:
        best = 0.0
    return Assignment(tuple(best_cols), float(best))
