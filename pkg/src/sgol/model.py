"""Sketch-conditioned DETR, its unconditioned multi-class twin, the sketch classifier
and the classifier-filtered detection baseline."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from . import tensor as T
from .structures import Detection, DetectionOutput, DetectionSet
from .tensor import Tensor

CONDITIONING_MODES = ("object_query", "encoder_concat", "none")


@dataclass
class SketchDETRConfig:
    d: int = 32
    num_queries: int = 8
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_dim: int = 64
    conditioning_mode: str = "encoder_concat"
    num_classes: int | None = None  # set for the multi-class detector (conditioning "none")
    backbone_channels: tuple[int, ...] = (16, 32, 32)
    sketch_channels: tuple[int, ...] = (16, 32, 32)
    mask_head_enabled: bool = False
    mask_hidden: int = 8
    image_size: int = 48
    sketch_size: int = 32
    pos_temperature: float = 10000.0
    query_init_std: float = 1.0
    coord_channels: bool = True  # append normalized (x, y) planes to the image
    box_reference: bool = True  # offset box centers by the last cross-attention centroid

    def __post_init__(self):
        self.backbone_channels = tuple(self.backbone_channels)
        self.sketch_channels = tuple(self.sketch_channels)
        if self.conditioning_mode not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {self.conditioning_mode!r}")
        if self.d % 4 or self.d % self.heads:
            raise ValueError("d must be divisible by 4 and by the head count")
        if self.conditioning_mode == "none" and self.num_classes is None:
            raise ValueError("an unconditioned detector needs num_classes")
        if self.conditioning_mode != "none" and self.num_classes is not None:
            raise ValueError("conditioned detectors use the binary object head")

    @property
    def feature_size(self) -> int:
        return _cnn_out(self.image_size, len(self.backbone_channels) + 1)

    @property
    def mask_size(self) -> int:
        return 4 * self.feature_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        d["sketch_channels"] = list(self.sketch_channels)
        return d


def micro_config(**overrides) -> SketchDETRConfig:
    """Tiny configuration used for end-to-end gradient checks."""
    base = dict(
        d=8,
        num_queries=3,
        heads=2,
        enc_layers=1,
        dec_layers=1,
        ffn_dim=8,
        backbone_channels=(2, 2, 2),
        sketch_channels=(2, 2, 2),
        image_size=12,
        sketch_size=8,
        mask_hidden=2,
    )
    base.update(overrides)
    return SketchDETRConfig(**base)


def _cnn_out(size: int, n_stride2: int) -> int:
    # first conv keeps resolution, the rest halve it (k=3, pad=1)
    for _ in range(n_stride2 - 1):
        size = (size + 2 - 3) // 2 + 1
    return size


class ConvStack(nn.Module):
    """3x3 conv + relu blocks: one at stride 1, then stride-2 blocks down to stride 8."""

    def __init__(self, c_in: int, channels: tuple[int, ...], d: int, rng: np.random.Generator):
        chans = (c_in,) + tuple(channels) + (d,)
        self.convs = [
            nn.Conv2d(a, b, 3, rng, stride=1 if i == 0 else 2, padding=1)
            for i, (a, b) in enumerate(zip(chans[:-1], chans[1:]))
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = T.relu(conv(x))
        return x


class Backbone(ConvStack):
    """Image CNN. With ``coord_channels`` two constant planes holding the
    normalized pixel x and y are stacked onto the RGB input, so the features
    (and hence the attention values) carry absolute position."""

    def __init__(self, cfg: SketchDETRConfig, rng):
        self.coord_channels = cfg.coord_channels
        super().__init__(5 if cfg.coord_channels else 3, cfg.backbone_channels, cfg.d, rng)


def coord_planes(size: int) -> np.ndarray:
    c = (np.arange(size) + 0.5) / size
    return np.stack([np.broadcast_to(c[None, :], (size, size)), np.broadcast_to(c[:, None], (size, size))])


def backbone_forward(backbone: Backbone, image) -> Tensor:
    image = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float64))
    if image.ndim not in (3, 4) or image.shape[-3] != 3:
        raise T.ShapeError(f"backbone expects a (3, S, S) image or a batch of them, got {image.shape}")
    image = (image - 0.5) * 4.0  # center and scale pixel values
    if backbone.coord_channels:
        planes = coord_planes(image.shape[-1]) - 0.5
        planes = np.broadcast_to(planes, image.shape[:-3] + planes.shape)
        image = T.concat([image, Tensor(np.ascontiguousarray(planes))], axis=-3)
    return backbone(image)


class SketchEncoder(nn.Module):
    """Conv stack on the 1-channel raster, globally average pooled to a d-vector."""

    def __init__(self, cfg: SketchDETRConfig, rng):
        self.cnn = ConvStack(1, cfg.sketch_channels, cfg.d, rng)

    def __call__(self, sketch: Tensor) -> Tensor:
        return sketch_encode(self, sketch)


def sketch_encode(enc: SketchEncoder, sketch) -> Tensor:
    sketch = sketch if isinstance(sketch, Tensor) else Tensor(np.asarray(sketch, dtype=np.float64))
    if sketch.ndim not in (3, 4) or sketch.shape[-3] != 1:
        raise T.ShapeError(f"sketch must be (1, S, S) or (B, 1, S, S), got {sketch.shape}")
    fmap = enc.cnn(sketch)
    return T.mean(fmap, (-2, -1))


def condition_object_queries(q: Tensor, f_s: Tensor, proj: nn.Linear) -> Tensor:
    """Concatenate (query, sketch feature) per slot and project back to width d.

    ``q`` is (N, d) or (B, N, d); ``f_s`` is (d,) or (B, d).
    """
    n, d = q.shape[-2], q.shape[-1]
    if proj.d_in != 2 * d or f_s.shape[-1] != d:
        raise T.ShapeError("object-query conditioning needs a 2d -> d projection")
    lead = f_s.shape[:-1]
    q_b = T.broadcast_to(q, lead + (n, d)) if q.ndim == 2 and lead else q
    fs_b = T.broadcast_to(f_s.reshape(lead + (1, d)), lead + (n, d))
    return proj(T.concat([q_b, fs_b], axis=-1))


def condition_encoder(f: Tensor, f_s: Tensor, fuse: nn.Conv2d) -> Tensor:
    """Tile the sketch feature over the map, stack on channels, 1x1-conv back to d.

    ``f`` is (d, H, W) or (B, d, H, W); ``f_s`` is (d,) or (B, d).
    """
    d, h, w = f.shape[-3:]
    if fuse.c_in != 2 * d or fuse.k != 1 or f_s.shape[-1] != d:
        raise T.ShapeError("encoder conditioning needs a 1x1, 2d -> d convolution")
    lead = f_s.shape[:-1]
    tiled = T.broadcast_to(f_s.reshape(lead + (d, 1, 1)), lead + (d, h, w))
    return fuse(T.concat([f, tiled], axis=-3))


def selector_init(layer, d: int) -> None:
    """Set a 2d -> d layer to pass its first d inputs through unchanged."""
    w = np.zeros(layer.weight.shape)
    idx = np.arange(d)
    if w.ndim == 4:
        w[idx, idx, 0, 0] = 1.0
    else:
        w[idx, idx] = 1.0
    layer.weight.data = w
    layer.bias.data = np.zeros(layer.bias.shape)


class AttentionMap(nn.Module):
    """Per-head attention of decoder outputs over encoder tokens (no values)."""

    def __init__(self, d: int, heads: int, rng):
        self.heads, self.d = heads, d
        self.w_q = nn.Linear(d, d, rng)
        self.w_k = nn.Linear(d, d, rng)

    def __call__(self, queries: Tensor, keys: Tensor) -> Tensor:
        return T.softmax(nn.attention_logits(self, queries, keys), -1)


class MaskHead(nn.Module):
    """Attention maps (heads x H x W) per query, refined and upsampled x4 to mask logits."""

    def __init__(self, cfg: SketchDETRConfig, rng):
        c = cfg.mask_hidden
        self.attn = AttentionMap(cfg.d, cfg.heads, rng)
        self.conv1 = nn.Conv2d(cfg.heads, c, 3, rng, padding=1)
        self.conv2 = nn.Conv2d(c, c, 3, rng, padding=1)
        self.conv3 = nn.Conv2d(c, 1, 3, rng, padding=1)
        self.size = cfg.feature_size


def mask_head_forward(head: MaskHead | None, decoder_out: Tensor, memory: Tensor) -> Tensor:
    """(B, N, d) decoder outputs and (B, HW, d) encoder tokens to (B, N, 4H, 4W) logits."""
    if head is None:
        raise RuntimeError("mask head is disabled for this model")
    b, n, _ = decoder_out.shape
    h = w = head.size
    att = head.attn(decoder_out, memory)  # (B, heads, N, HW)
    maps = att.transpose(0, 2, 1, 3).reshape(b * n, head.attn.heads, h, w)
    x = T.relu(head.conv1(maps))
    x = T.upsample2x(x)
    x = T.relu(head.conv2(x))
    x = T.upsample2x(x)
    x = head.conv3(x)
    return x.reshape(b, n, 4 * h, 4 * w)


class SketchDETR(nn.Module):
    """DETR with optional sketch conditioning; ``conditioning_mode="none"`` gives the multi-class detector."""

    def __init__(self, cfg: SketchDETRConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d
        self.backbone = Backbone(cfg, rng)
        conditioned = cfg.conditioning_mode != "none"
        if conditioned:
            self.sketch_encoder = SketchEncoder(cfg, rng)
        if cfg.conditioning_mode == "encoder_concat":
            self.fuse = nn.Conv2d(2 * d, d, 1, rng)
        if cfg.conditioning_mode == "object_query":
            self.query_proj = nn.Linear(2 * d, d, rng)
        self.encoder = [nn.TransformerEncoderLayer(d, cfg.heads, cfg.ffn_dim, rng) for _ in range(cfg.enc_layers)]
        self.decoder = [nn.TransformerDecoderLayer(d, cfg.heads, cfg.ffn_dim, rng) for _ in range(cfg.dec_layers)]
        self.query_embed = Tensor(rng.normal(0.0, cfg.query_init_std, (cfg.num_queries, d)), requires_grad=True)
        self.box_head = nn.MLP([d, d, d, 4], rng)
        n_out = 2 if conditioned else cfg.num_classes + 1
        self.class_head = nn.Linear(d, n_out, rng)
        if cfg.mask_head_enabled:
            self.mask_head = MaskHead(cfg, rng)
        s = cfg.feature_size
        self.pos = Tensor(nn.positional_encoding_2d(s, s, d, cfg.pos_temperature).reshape(d, s * s).T.copy())
        c = (np.arange(s) + 0.5) / s
        self.token_xy = np.stack([np.tile(c, s), np.repeat(c, s)], axis=1)  # (HW, 2) token centers

    @property
    def conditioned(self) -> bool:
        return self.cfg.conditioning_mode != "none"

    def __call__(self, images, sketches=None) -> DetectionOutput:
        return detr_forward(self, images, sketches)


def _batch(x, ndim: int) -> tuple[Tensor, bool]:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if x.ndim == ndim - 1:
        return x.reshape((1,) + x.shape), True
    return x, False


def reference_logits(weights: Tensor, token_xy: np.ndarray) -> Tensor:
    """Logit of the head-averaged attention centroid, padded with zeros for (w, h).

    ``weights`` is (B, heads, N, HW); the result is (B, N, 4) and is added to
    the box head output before the sigmoid, so a query's predicted center
    starts where it attends.
    """
    centroid = T.matmul(T.mean(weights, 1), Tensor(token_xy))  # (B, N, 2), inside (0, 1)
    ref = T.log(centroid) - T.log(1.0 - centroid)
    return T.concat([ref, T.zeros(ref.shape)], axis=-1)


def detr_forward(model: SketchDETR, image, sketch=None) -> DetectionOutput:
    """Image (3,S,S) or batch (B,3,S,S), plus sketch (1,S',S') / (B,1,S',S') when conditioned."""
    cfg = model.cfg
    if model.conditioned and sketch is None:
        raise ValueError(f"conditioning mode {cfg.conditioning_mode!r} needs a sketch")
    images, single = _batch(image, 4)
    b = images.shape[0]
    f = backbone_forward(model.backbone, images)
    f_s = None
    if model.conditioned:
        sketches, _ = _batch(sketch, 4)
        if sketches.shape[0] != b:
            raise T.ShapeError("image and sketch batch sizes differ")
        f_s = sketch_encode(model.sketch_encoder, sketches)
    if cfg.conditioning_mode == "encoder_concat":
        f = condition_encoder(f, f_s, model.fuse)
    d, h, w = f.shape[1:]
    tokens = f.reshape(b, d, h * w).transpose(0, 2, 1)
    pos = model.pos
    memory = tokens
    for layer in model.encoder:
        memory = layer(memory, pos)
    qpos = T.broadcast_to(model.query_embed, (b, cfg.num_queries, d))
    if cfg.conditioning_mode == "object_query":
        qpos = condition_object_queries(qpos, f_s, model.query_proj)
    tgt = T.zeros((b, cfg.num_queries, d))
    weights = None
    for layer in model.decoder:
        tgt, weights = layer(tgt, memory, qpos, pos, return_weights=True)
    raw = model.box_head(tgt)
    if cfg.box_reference:
        raw = raw + reference_logits(weights, model.token_xy)
    boxes = T.sigmoid(raw)
    logits = model.class_head(tgt)
    masks = mask_head_forward(model.mask_head, tgt, memory + pos) if cfg.mask_head_enabled else None
    out = DetectionOutput(
        boxes=boxes,
        obj_logits=logits if model.conditioned else None,
        class_logits=None if model.conditioned else logits,
        mask_logits=masks,
    )
    if single:
        out = DetectionOutput(*(None if t is None else t[0] for t in (out.boxes, out.obj_logits, out.class_logits, out.mask_logits)))
    return out


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _upsample_masks(logits: np.ndarray, size: int) -> np.ndarray:
    factor = size // logits.shape[-1]
    if factor > 1:
        logits = logits.repeat(factor, axis=-1).repeat(factor, axis=-2)
    return logits


def postprocess(
    out: DetectionOutput,
    score_threshold: float = 0.0,
    conditioning_class: int | None = None,
    image_size: int | None = None,
) -> DetectionSet:
    """Score, threshold and convert one image's raw outputs to corner-form detections."""
    if not 0.0 <= score_threshold <= 1.0:
        raise ValueError("score threshold must lie in [0, 1]")
    boxes = out.boxes.data
    if out.class_logits is not None:
        p = _softmax(out.class_logits.data)[:, :-1]
        labels = p.argmax(axis=1)
        scores = p[np.arange(len(p)), labels]
    else:
        scores = _softmax(out.obj_logits.data)[:, 0]
        labels = np.full(len(scores), -1 if conditioning_class is None else conditioning_class)
    masks = None
    if out.mask_logits is not None:
        ml = out.mask_logits.data
        masks = _upsample_masks(ml, image_size or ml.shape[-1]) >= 0.0  # sigmoid >= 0.5
    cx, cy, w, h = boxes.T
    xyxy = np.clip(np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1), 0.0, 1.0)
    dets = [
        Detection(xyxy[i], float(scores[i]), int(labels[i]), None if masks is None else masks[i])
        for i in range(len(scores))
        if scores[i] >= score_threshold
    ]
    return DetectionSet(dets)


# --- sketch classifier and the filtering baseline --------------------------


class SketchClassifier(nn.Module):
    def __init__(self, cfg: SketchDETRConfig, vocabulary, rng):
        self.vocabulary = tuple(int(v) for v in vocabulary)
        self.encoder = SketchEncoder(cfg, rng)
        self.head = nn.Linear(cfg.d, len(self.vocabulary), rng)

    def logits(self, sketches) -> Tensor:
        s, _ = _batch(sketches, 4)
        return self.head(sketch_encode(self.encoder, s))


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax, ties resolved to the lowest index."""
    return np.asarray(logits).argmax(axis=-1)


def sketch_classify(classifier: SketchClassifier, sketch) -> int:
    with T.no_grad():
        lg = classifier.logits(sketch).data[0]
    return classifier.vocabulary[int(argmax_lowest(lg))]


@dataclass
class PretrainedPair:
    detector: SketchDETR  # multi-class, unconditioned
    classifier: SketchClassifier
    detector_vocabulary: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.detector_vocabulary:
            self.detector_vocabulary = tuple(range(self.detector.cfg.num_classes))
        if not set(self.classifier.vocabulary) & set(self.detector_vocabulary):
            raise ValueError("detector and sketch classifier share no classes")


def t2b_filter(dets: DetectionSet, z: int) -> DetectionSet:
    return DetectionSet([d for d in dets if d.label == z])


def t2b_inference(
    pair: PretrainedPair,
    image,
    sketch=None,
    score_threshold: float = 0.0,
    true_class: int | None = None,
    detections: DetectionSet | None = None,
) -> DetectionSet:
    """Detect everything, classify the sketch, keep detections of that class.

    Passing ``true_class`` substitutes the ground-truth sketch label for the
    classifier (the perfect-classifier upper bound). Precomputed detector
    output may be passed as ``detections`` to avoid re-running the detector.
    """
    if detections is None:
        with T.no_grad():
            out = detr_forward(pair.detector, image)
        detections = postprocess(out, score_threshold, image_size=pair.detector.cfg.image_size)
    if true_class is not None:
        z = true_class
    else:
        if sketch is None:
            raise ValueError("a sketch is required unless true_class is given")
        z = sketch_classify(pair.classifier, sketch)
    return t2b_filter(detections, z)


# --- persistence -----------------------------------------------------------


def save_model(path, model: nn.Module, manifest: dict) -> None:
    """Write ``<path>.ckpt`` (flat binary) and ``<path>.json`` (config, vocabulary, policy)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(path.with_suffix(".ckpt"), model.state_dict())
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_model(path) -> tuple[nn.Module, dict]:
    path = Path(path)
    ckpt, meta = path.with_suffix(".ckpt"), path.with_suffix(".json")
    if not ckpt.exists() or not meta.exists():
        raise FileNotFoundError(f"missing checkpoint {ckpt} or manifest {meta}")
    manifest = json.loads(meta.read_text())
    cfg = SketchDETRConfig(**manifest["config"])
    rng = np.random.default_rng(0)
    if manifest["kind"] == "sketch_classifier":
        model: nn.Module = SketchClassifier(cfg, manifest["vocabulary"], rng)
    else:
        model = SketchDETR(cfg, rng)
    model.load_state_dict(nn.load_checkpoint(ckpt))
    return model, manifest
