"""Training loops: sketch classifier, multi-class detector, sketch-conditioned detector."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .data import Dataset, Sketch
from .losses import batch_loss
from .matching import LossWeights
from .model import SketchClassifier, SketchDETR, SketchDETRConfig, selector_init
from .structures import Targets

logger = logging.getLogger(__name__)

FREEZE_POLICIES = {
    "none": (),
    "backbones": ("backbone.", "sketch_encoder."),
    "backbones_encoder": ("backbone.", "sketch_encoder.", "encoder."),
    "all": ("",),
    "mask_only": None,  # everything except the mask head
}


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN/Inf loss or gradient."""


def frozen_names(model: nn.Module, policy: str) -> set[str]:
    try:
        prefixes = FREEZE_POLICIES[policy]
    except KeyError:
        raise ValueError(f"unknown freeze policy {policy!r}") from None
    if prefixes is None:
        return {name for name, _ in model.named_parameters() if not name.startswith("mask_head.")}
    return {name for name, _ in model.named_parameters() if any(name.startswith(p) for p in prefixes)}


@dataclass
class TrainSample:
    scene: int
    cls: int | None  # None: every instance is a target (multi-class training)
    sketch: Sketch | None = None


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-4
    clip_norm: float = 0.1
    freeze_policy: str = "none"
    masks: bool = False
    hflip: bool = True  # mirror images and sketches with probability one half
    lr_drop: int | None = None  # epoch from which the learning rate is scaled by 0.1
    weights: LossWeights = field(default_factory=LossWeights)


def downsample_masks(masks: np.ndarray, size: int) -> np.ndarray:
    """Block-average boolean masks to ``size`` and binarize at one half."""
    if masks.shape[-1] == size:
        return masks.astype(np.float64)
    f = masks.shape[-1] // size
    n = masks.shape[0]
    return (masks.reshape(n, size, f, size, f).mean(axis=(2, 4)) >= 0.5).astype(np.float64)


def scene_targets(ds: Dataset, scene: int, cls: int | None, mask_size: int | None = None) -> Targets:
    sc = ds.scenes[scene]
    keep = np.ones(len(sc.classes), dtype=bool) if cls is None else sc.classes == cls
    masks = None
    if mask_size is not None:
        masks = downsample_masks(ds.masks(scene)[keep], mask_size)
    return Targets(sc.boxes[keep], sc.classes[keep], masks)


def conditioned_samples(
    ds: Dataset, style: str, rng: np.random.Generator, split: str = "train", scenes=None
) -> list[TrainSample]:
    """One sketch per class present in each scene, drawn from the style's training pool."""
    vocab = set(ds.vocabularies[style])
    pools = {c: ds.sketch_pool(style, "train", c) for c in vocab}
    out = []
    for sid in scenes if scenes is not None else ds.scene_ids(split):
        for c in sorted(set(ds.scenes[sid].classes.tolist()) & vocab):
            pool = pools[c]
            out.append(TrainSample(sid, c, pool[int(rng.integers(len(pool)))]))
    return out


def multiclass_samples(ds: Dataset, split: str = "train") -> list[TrainSample]:
    return [TrainSample(sid, None) for sid in ds.scene_ids(split)]


def flip_targets(t: Targets) -> Targets:
    boxes = np.array(t.boxes, dtype=np.float64)
    boxes[:, 0] = 1.0 - boxes[:, 0]
    return Targets(boxes, t.labels, None if t.masks is None else t.masks[..., ::-1].copy())


def _stack_batch(ds: Dataset, batch: list[TrainSample], mask_size: int | None, rng=None):
    # every shape class is mirror-symmetric, so a horizontal flip keeps labels valid
    flip_img = rng.random(len(batch)) < 0.5 if rng is not None else np.zeros(len(batch), bool)
    flip_sk = rng.random(len(batch)) < 0.5 if rng is not None else np.zeros(len(batch), bool)
    images = np.stack([ds.image(s.scene)[..., ::-1] if f else ds.image(s.scene) for s, f in zip(batch, flip_img)])
    sketches = None
    if batch[0].sketch is not None:
        sketches = np.stack([ds.sketch_pixels(s.sketch)[..., ::-1] if f else ds.sketch_pixels(s.sketch) for s, f in zip(batch, flip_sk)])
    targets = [scene_targets(ds, s.scene, s.cls, mask_size) for s in batch]
    targets = [flip_targets(t) if f else t for t, f in zip(targets, flip_img)]
    return images, sketches, targets


def train_epoch(
    model: SketchDETR,
    ds: Dataset,
    samples: list[TrainSample],
    opt: nn.AdamWState,
    rng: np.random.Generator,
    cfg: TrainConfig,
) -> dict[str, float]:
    """One shuffled pass; AdamW steps on parameters outside ``opt.frozen``."""
    order = rng.permutation(len(samples))
    named = list(model.named_parameters())
    trainable = [p for n, p in named if n not in opt.frozen]
    frozen = [p for n, p in named if n in opt.frozen]
    # frozen parameters need no gradient, so backward stops at them
    for p in frozen:
        p.requires_grad = False
    try:
        return _run_epoch(model, ds, samples, order, opt, named, trainable, cfg, rng)
    finally:
        for p in frozen:
            p.requires_grad = True


def _run_epoch(model, ds, samples, order, opt, named, trainable, cfg, rng) -> dict[str, float]:
    mask_size = model.cfg.mask_size if (cfg.masks and model.cfg.mask_head_enabled) else None
    totals: dict[str, float] = {}
    n_batches = 0
    for start in range(0, len(order), cfg.batch_size):
        batch = [samples[i] for i in order[start : start + cfg.batch_size]]
        images, sketches, targets = _stack_batch(ds, batch, mask_size, rng if cfg.hflip else None)
        model.zero_grad()
        try:
            out = model(images, sketches)
            loss, parts = batch_loss(out, targets, cfg.weights, masks=mask_size is not None)
        except T.NonFiniteError as exc:
            raise NonFiniteLossError(f"non-finite value in forward pass: {exc}") from exc
        if not np.isfinite(loss.data).all():
            raise NonFiniteLossError("non-finite loss")
        if trainable:
            T.backward(loss)
            if cfg.clip_norm:
                nn.clip_grad_norm(trainable, cfg.clip_norm)
            try:
                nn.adamw_step(opt, named)
            except T.NonFiniteError as exc:
                raise NonFiniteLossError(str(exc)) from exc
        for k, v in parts.items():
            totals[k] = totals.get(k, 0.0) + v
        n_batches += 1
    return {k: v / max(1, n_batches) for k, v in totals.items()}


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> nn.AdamWState:
    return nn.AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay, frozen=frozen_names(model, cfg.freeze_policy))


@dataclass
class History:
    epochs: list[dict[str, float]] = field(default_factory=list)
    seconds: float = 0.0


def fit(
    model: SketchDETR,
    ds: Dataset,
    make_samples,
    cfg: TrainConfig,
    seed: int,
    opt: nn.AdamWState | None = None,
) -> History:
    """Run ``cfg.epochs`` epochs; ``make_samples(rng)`` rebuilds the pair list each epoch."""
    rng = np.random.default_rng(seed)
    opt = opt or make_optimizer(model, cfg)
    hist = History()
    t0 = time.perf_counter()
    base_lr = opt.lr
    for epoch in range(cfg.epochs):
        opt.lr = base_lr * (0.1 if cfg.lr_drop is not None and epoch >= cfg.lr_drop else 1.0)
        metrics = train_epoch(model, ds, make_samples(rng), opt, rng, cfg)
        hist.epochs.append(metrics)
        logger.info("epoch %d: %s", epoch, {k: round(v, 4) for k, v in metrics.items()})
    hist.seconds = time.perf_counter() - t0
    return hist


# --- sketch classifier -----------------------------------------------------


def train_classifier(
    clf: SketchClassifier,
    ds: Dataset,
    style: str,
    epochs: int = 10,
    batch_size: int = 32,
    lr: float = 2e-3,
    seed: int = 0,
) -> list[float]:
    pool = [k for k in ds.sketch_pool(style, "train") if k.cls in clf.vocabulary]
    index = {c: i for i, c in enumerate(clf.vocabulary)}
    x = np.stack([ds.sketch_pixels(k) for k in pool])
    y = np.array([index[k.cls] for k in pool])
    rng = np.random.default_rng(seed)
    opt = nn.AdamWState(lr=lr, weight_decay=1e-4)
    named = list(clf.named_parameters())
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(pool))
        running = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            clf.zero_grad()
            logp = T.log_softmax(clf.logits(x[idx]), -1)
            loss = -logp[np.arange(len(idx)), y[idx]].mean()
            T.backward(loss)
            nn.adamw_step(opt, named)
            running += float(loss.data) * len(idx)
        losses.append(running / len(pool))
    return losses


def classifier_accuracy(clf: SketchClassifier, ds: Dataset, style: str, split: str = "test") -> float:
    pool = [k for k in ds.sketch_pool(style, split) if k.cls in clf.vocabulary]
    if not pool:
        return float("nan")
    x = np.stack([ds.sketch_pixels(k) for k in pool])
    with T.no_grad():
        lg = clf.logits(x).data
    pred = np.array(clf.vocabulary)[lg.argmax(axis=1)]
    return float(np.mean(pred == np.array([k.cls for k in pool])))


# --- initialization from pretrained parts ----------------------------------


def init_from_pretrained(model: SketchDETR, detector: SketchDETR | None, classifier: SketchClassifier | None) -> None:
    """Copy shared weights from the multi-class detector and the sketch classifier.

    The object head is kept fresh (binary vs multi-class); conditioning layers
    start as pass-through selectors so the pretrained features are preserved.
    """
    if detector is not None:
        src = detector.state_dict()
        own = dict(model.named_parameters())
        for name, arr in src.items():
            if name.startswith("class_head.") or name not in own or own[name].shape != arr.shape:
                continue
            own[name].data = arr.copy()
    if classifier is not None and model.conditioned:
        model.sketch_encoder.load_state_dict(classifier.encoder.state_dict())
    d = model.cfg.d
    if model.cfg.conditioning_mode == "encoder_concat":
        selector_init(model.fuse, d)
    if model.cfg.conditioning_mode == "object_query":
        selector_init(model.query_proj, d)


def conditioned_config(base: SketchDETRConfig, mode: str, mask: bool | None = None) -> SketchDETRConfig:
    d = base.to_dict()
    d["conditioning_mode"] = mode
    d["num_classes"] = None
    if mask is not None:
        d["mask_head_enabled"] = mask
    return SketchDETRConfig(**d)


def multiclass_config(base: SketchDETRConfig, num_classes: int, mask: bool | None = None) -> SketchDETRConfig:
    d = base.to_dict()
    d["conditioning_mode"] = "none"
    d["num_classes"] = num_classes
    if mask is not None:
        d["mask_head_enabled"] = mask
    return SketchDETRConfig(**d)
