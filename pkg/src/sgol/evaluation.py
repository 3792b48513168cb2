"""COCO-style AP for sketch-guided localization, for boxes and masks."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import ClassSplit, Dataset, Sketch
from .geometry import iou, mask_iou, to_xyxy
from .model import PretrainedPair, SketchDETR, detr_forward, postprocess, sketch_classify, t2b_filter
from .structures import Detection, DetectionSet

RECALL_POINTS = np.arange(101) / 100.0
COCO_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2).tolist())
BRUTE_MAX_DETS = 10
BRUTE_MAX_GTS = 5


@dataclass
class EvalConfig:
    iou_thresholds: tuple[float, ...] = COCO_THRESHOLDS
    mode: str = "box"  # or "mask"
    pool: str = "class"  # "class": pool detections over a class's sketches; "sketch": average per-sketch AP
    negatives_ratio: float = 1.0
    seed: int = 0
    max_sketches: int | None = None

    def __post_init__(self):
        th = list(self.iou_thresholds)
        if any(b <= a for a, b in zip(th, th[1:])) or not all(0 < t <= 1 for t in th):
            raise ValueError("IoU thresholds must be strictly increasing in (0, 1]")
        if self.mode not in ("box", "mask"):
            raise ValueError(f"unknown eval mode {self.mode!r}")
        if self.pool not in ("class", "sketch"):
            raise ValueError(f"unknown pooling {self.pool!r}")


@dataclass
class GroundTruth:
    boxes: np.ndarray  # corner form
    masks: np.ndarray | None = None


def _iou_matrix(dets: Sequence[Detection], gts: GroundTruth, mode: str) -> np.ndarray:
    if mode == "mask":
        return np.array([[mask_iou(d.mask, g) for g in gts.masks] for d in dets]).reshape(len(dets), len(gts.boxes))
    if not len(dets) or not len(gts.boxes):
        return np.zeros((len(dets), len(gts.boxes)))
    db = np.stack([d.box for d in dets])
    return np.asarray(iou(db[:, None, :], gts.boxes[None, :, :])).reshape(len(dets), len(gts.boxes))


def rank_order(scores) -> np.ndarray:
    """Descending score order; ties keep insertion order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def match_dets(dets: DetectionSet | Sequence[Detection], gts: GroundTruth, iou_t: float, mode: str = "box") -> list[bool]:
    """Greedy TP/FP flags for detections already sorted by descending score.

    Each detection takes the highest-IoU unmatched ground truth (lowest index
    on ties) when that IoU reaches ``iou_t``.
    """
    dets = list(dets)
    ious = _iou_matrix(dets, gts, mode)
    taken = np.zeros(ious.shape[1], dtype=bool)
    flags = []
    for i in range(len(dets)):
        best, best_j = -1.0, -1
        for j in range(ious.shape[1]):
            if not taken[j] and ious[i, j] >= iou_t and ious[i, j] > best:
                best, best_j = ious[i, j], j
        if best_j >= 0:
            taken[best_j] = True
        flags.append(best_j >= 0)
    return flags


def _interpolated_mean(precisions: Sequence[float], recalls: Sequence[float]) -> float:
    """Mean over 101 recall points of the max precision at recall >= r."""
    env = []
    for r in RECALL_POINTS:
        best = 0.0
        for p, rc in zip(precisions, recalls):
            if rc >= r and p > best:
                best = p
        env.append(best)
    return math.fsum(env) / len(RECALL_POINTS)


def average_precision(flags: Sequence[bool], n_gt: int) -> float | None:
    """101-point interpolated AP of ranked TP/FP flags.

    Returns 0 when there is no ground truth but some detection, and None
    (class skipped) when there are neither.
    """
    flags = np.asarray(flags, dtype=bool)
    if n_gt == 0:
        return 0.0 if flags.size else None
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    k = np.arange(1, flags.size + 1)
    precision = tp / k
    recall = tp / n_gt
    # envelope: running max of precision from the tail
    env = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    vals = [float(env[i]) if i < env.size else 0.0 for i in idx]
    return math.fsum(vals) / len(RECALL_POINTS)


def brute_force_ap(dets: Sequence[Detection], gts: GroundTruth, iou_t: float, mode: str = "box") -> float:
    """Oracle AP: re-match every ranked prefix from scratch and integrate the envelope directly."""
    dets = list(dets)
    if len(dets) > BRUTE_MAX_DETS or len(gts.boxes) > BRUTE_MAX_GTS:
        raise ValueError("brute_force_ap is limited to tiny instances")
    n_gt = len(gts.boxes)
    if n_gt == 0:
        return 0.0
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    ranked = [dets[i] for i in order]
    precisions, recalls = [], []
    for k in range(1, len(ranked) + 1):
        prefix = ranked[:k]
        ious = _iou_matrix(prefix, gts, mode)
        used: set[int] = set()
        tp = 0
        for i in range(k):
            cands = [(ious[i, j], -j) for j in range(n_gt) if j not in used and ious[i, j] >= iou_t]
            if cands:
                _, neg_j = max(cands)
                used.add(-neg_j)
                tp += 1
        precisions.append(float(Fraction(tp, k)))
        recalls.append(float(Fraction(tp, n_gt)))
    return _interpolated_mean(precisions, recalls)


# --- SGOL evaluation -------------------------------------------------------

Pipeline = Callable[[Sequence[int], Sketch, int], list[DetectionSet]]


@dataclass
class APResult:
    thresholds: tuple[float, ...]
    per_class: dict[int, list[float]] = field(default_factory=dict)
    counts: dict[int, dict[str, int]] = field(default_factory=dict)
    curves: dict[int, list[tuple[float, bool]]] = field(default_factory=dict)

    @property
    def ap50(self) -> float:
        i = self.thresholds.index(0.5) if 0.5 in self.thresholds else 0
        vals = [v[i] for v in self.per_class.values()]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def map(self) -> float:
        vals = [np.mean(v) for v in self.per_class.values()]
        return float(np.mean(vals)) if vals else 0.0

    def class_map(self, cls: int) -> float:
        return float(np.mean(self.per_class[cls]))

    def subset(self, classes) -> "APResult":
        keep = [c for c in self.per_class if c in set(classes)]
        return APResult(
            self.thresholds,
            {c: self.per_class[c] for c in keep},
            {c: self.counts[c] for c in keep if c in self.counts},
            {c: self.curves[c] for c in keep if c in self.curves},
        )

    def to_dict(self) -> dict:
        return {
            "mAP": self.map,
            "AP50": self.ap50,
            "thresholds": list(self.thresholds),
            "per_class": {
                str(c): {"mAP": float(np.mean(v)), "AP50": v[self.thresholds.index(0.5)] if 0.5 in self.thresholds else v[0], "AP": v, **self.counts.get(c, {})}
                for c, v in sorted(self.per_class.items())
            },
        }


def pr_curve_rows(ranked: Sequence[tuple[float, bool]], n_gt: int) -> list[tuple[int, float, int, float, float]]:
    """(rank, score, tp, precision, recall) rows for a ranked flag list."""
    rows = []
    tp = 0
    for k, (score, flag) in enumerate(ranked, start=1):
        tp += int(flag)
        rows.append((k, score, int(flag), tp / k, tp / n_gt if n_gt else 0.0))
    return rows


def image_pool(ds: Dataset, cls: int, split: str, cfg: EvalConfig) -> list[int]:
    """Test scenes containing ``cls`` plus a seeded, equal-sized sample without it."""
    ids = ds.scene_ids(split)
    pos = [i for i in ids if cls in ds.scenes[i].classes]
    neg = [i for i in ids if cls not in ds.scenes[i].classes]
    n_neg = min(len(neg), int(round(cfg.negatives_ratio * len(pos))))
    rng = np.random.default_rng([cfg.seed, cls])
    picked = sorted(rng.choice(len(neg), size=n_neg, replace=False).tolist()) if n_neg else []
    return pos + [neg[i] for i in picked]


def ground_truth(ds: Dataset, scene: int, cls: int, mode: str) -> GroundTruth:
    sc = ds.scenes[scene]
    keep = sc.classes == cls
    boxes = np.clip(to_xyxy(sc.boxes[keep]), 0.0, 1.0).reshape(-1, 4)
    masks = ds.masks(scene)[keep] if mode == "mask" else None
    return GroundTruth(boxes, masks)


def sgol_evaluate(
    pipeline: Pipeline,
    ds: Dataset,
    sketch_pools: dict[int, list[Sketch]],
    cfg: EvalConfig = EvalConfig(),
    split: str = "test",
    threads: int = 1,
) -> APResult:
    """Per-class AP over every (sketch, image) pair; classes with empty pools are an error.

    With ``threads > 1`` classes are evaluated concurrently and merged in
    class order, so the result does not depend on scheduling.
    """
    for cls in sketch_pools:
        if not sketch_pools[cls]:
            raise ValueError(f"empty sketch pool for class {cls}")
    classes = sorted(sketch_pools)
    run = lambda c: _evaluate_class(pipeline, ds, c, sketch_pools[c], cfg, split)
    if threads > 1 and len(classes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            per = list(ex.map(run, classes))
    else:
        per = [run(c) for c in classes]
    result = APResult(tuple(cfg.iou_thresholds))
    for cls, (aps, curve, counts) in zip(classes, per):
        result.per_class[cls] = aps
        if curve is not None:
            result.curves[cls] = curve
            result.counts[cls] = counts
    return result


def _evaluate_class(pipeline, ds: Dataset, cls: int, pool: list[Sketch], cfg: EvalConfig, split: str):
    sketches = pool[: cfg.max_sketches] if cfg.max_sketches else pool
    scenes = image_pool(ds, cls, split, cfg)
    gts = {sid: ground_truth(ds, sid, cls, cfg.mode) for sid in scenes}
    runs = []  # (sketch index, scene, ranked detections)
    for si, sk in enumerate(sketches):
        for sid, dets in zip(scenes, pipeline(scenes, sk, cls)):
            order = rank_order(dets.scores) if len(dets) else []
            runs.append((si, sid, [dets[i] for i in order]))
    per_t = []
    curve = counts = None
    for t in cfg.iou_thresholds:
        groups: dict[int, list] = {}
        for si, sid, ranked in runs:
            flags = match_dets(ranked, gts[sid], t, cfg.mode)
            g = groups.setdefault(si if cfg.pool == "sketch" else 0, [[], [], 0])
            g[0].extend(d.score for d in ranked)
            g[1].extend(flags)
            g[2] += len(gts[sid].boxes)
        aps = []
        for key in sorted(groups):
            scores, flags, n_gt = groups[key]
            order = rank_order(scores)
            ap = average_precision([flags[i] for i in order], n_gt)
            if ap is not None:
                aps.append(ap)
            if t == 0.5 and cfg.pool == "class":
                curve = [(scores[i], flags[i]) for i in order]
                counts = {"gt": n_gt, "tp": int(sum(flags)), "fp": int(len(flags) - sum(flags))}
        per_t.append(float(np.mean(aps)) if aps else 0.0)
    return per_t, curve, counts


# --- pipelines ---------------------------------------------------------------


class ConditionedPipeline:
    """Runs a sketch-conditioned detector on batches of scenes for one sketch."""

    def __init__(self, model: SketchDETR, ds: Dataset, batch_size: int = 32, score_threshold: float = 0.0):
        self.model, self.ds = model, ds
        self.batch_size = batch_size
        self.score_threshold = score_threshold

    def __call__(self, scenes: Sequence[int], sketch: Sketch, cls: int) -> list[DetectionSet]:
        sk = self.ds.sketch_pixels(sketch)
        out = []
        for start in range(0, len(scenes), self.batch_size):
            chunk = scenes[start : start + self.batch_size]
            images = np.stack([self.ds.image(s) for s in chunk])
            sketches = np.broadcast_to(sk, (len(chunk),) + sk.shape)
            with T.no_grad():
                res = detr_forward(self.model, images, sketches)
            for b in range(len(chunk)):
                out.append(postprocess(res.item(b), self.score_threshold, cls, self.ds.image_size))
        return out


class T2BPipeline:
    """Classifier-filtered multi-class detections; ``upper_bound`` uses the true sketch class."""

    def __init__(self, pair: PretrainedPair, ds: Dataset, upper_bound: bool = False, batch_size: int = 32, score_threshold: float = 0.0):
        self.pair, self.ds = pair, ds
        self.upper_bound = upper_bound
        self.batch_size = batch_size
        self.score_threshold = score_threshold
        self._dets: dict[int, DetectionSet] = {}
        self._labels: dict = {}

    def detections(self, scenes: Sequence[int]) -> list[DetectionSet]:
        todo = [s for s in scenes if s not in self._dets]
        for start in range(0, len(todo), self.batch_size):
            chunk = todo[start : start + self.batch_size]
            images = np.stack([self.ds.image(s) for s in chunk])
            with T.no_grad():
                res = detr_forward(self.pair.detector, images)
            for b, sid in enumerate(chunk):
                self._dets[sid] = postprocess(res.item(b), self.score_threshold, image_size=self.ds.image_size)
        return [self._dets[s] for s in scenes]

    def sketch_label(self, sketch: Sketch) -> int:
        if sketch.path not in self._labels:
            self._labels[sketch.path] = sketch_classify(self.pair.classifier, self.ds.sketch_pixels(sketch))
        return self._labels[sketch.path]

    def __call__(self, scenes: Sequence[int], sketch: Sketch, cls: int) -> list[DetectionSet]:
        z = cls if self.upper_bound else self.sketch_label(sketch)
        return [t2b_filter(d, z) for d in self.detections(scenes)]


class OraclePipeline:
    """Emits the ground-truth instances of the query class at score 1."""

    def __init__(self, ds: Dataset):
        self.ds = ds

    def __call__(self, scenes: Sequence[int], sketch: Sketch, cls: int) -> list[DetectionSet]:
        out = []
        for sid in scenes:
            sc = self.ds.scenes[sid]
            masks = self.ds.masks(sid)
            boxes = np.clip(to_xyxy(sc.boxes), 0.0, 1.0)
            out.append(
                DetectionSet([Detection(boxes[k], 1.0, cls, masks[k]) for k in range(len(sc.classes)) if sc.classes[k] == cls])
            )
        return out


class EmptyPipeline:
    def __call__(self, scenes, sketch, cls):
        return [DetectionSet() for _ in scenes]


def sketch_pools(ds: Dataset, style: str, classes, split: str = "test") -> dict[int, list[Sketch]]:
    return {c: ds.sketch_pool(style, split, c) for c in classes}


@dataclass
class CrossResult:
    splits: dict[str, APResult]

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in self.splits.items()}


def cross_dataset_evaluate(
    pipeline: Pipeline,
    ds: Dataset,
    eval_style: str,
    cfg: EvalConfig = EvalConfig(),
    include_s_only: bool = False,
    train_style: str | None = None,
    threads: int = 1,
) -> CrossResult:
    """AP over shared (Q&S) and query-only (Q-S) classes using ``eval_style`` test sketches.

    S is the training-style vocabulary and Q the evaluation-style one; the
    training style defaults to the other style of the dataset. Q&S and Q-S are queried with
    evaluation-style sketches; S-Q, when requested, with training-style ones.
    With equal styles Q-S is empty and the result is plain same-style AP.
    """
    if train_style is None:
        train_style = next(s for s in ds.vocabularies if s != eval_style)
    split = ClassSplit(Q=ds.vocabularies[eval_style], S=ds.vocabularies[train_style])
    named = {"Q&S": (split.common, eval_style), "Q-S": (split.q_only, eval_style)}
    if include_s_only and split.s_only:
        named["S-Q"] = (split.s_only, train_style)
    out = {}
    for name, (classes, style) in named.items():
        if not classes:
            continue
        out[name] = sgol_evaluate(pipeline, ds, sketch_pools(ds, style, classes), cfg, threads=threads)
    if not out:
        raise ValueError(f"no evaluable classes for styles {train_style} -> {eval_style}")
    return CrossResult(out)


__all__ = [
    "EvalConfig",
    "APResult",
    "GroundTruth",
    "match_dets",
    "average_precision",
    "brute_force_ap",
    "sgol_evaluate",
    "cross_dataset_evaluate",
    "ConditionedPipeline",
    "T2BPipeline",
    "OraclePipeline",
    "EmptyPipeline",
    "image_pool",
    "pr_curve_rows",
    "sketch_pools",
]
