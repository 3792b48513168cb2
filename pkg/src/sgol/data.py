"""Synthetic multi-object scenes and two-style sketches of eight shape classes.

Scenes stand in for a natural-image detection set, style-A sketches for a
clean, detailed sketch collection and style-B sketches for a rough, abstract
one. Everything is a deterministic function of the master seed.
"""

from __future__ import annotations

import colorsys
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

CLASS_NAMES = ("circle", "square", "triangle", "lemniscate", "star5", "cross", "ellipse", "diamond")
NUM_CLASSES = len(CLASS_NAMES)
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
MAX_ROTATION = np.deg2rad(20.0)  # keeps squares distinct from diamonds
ELLIPSE_MINOR = 0.55
DIAMOND_HALF_WIDTH = 0.6
SQUARE_HALF = 0.8
CROSS_ARM = 0.3
STAR_INNER = 0.45


# --- shape geometry (unit frame: every shape lies inside the unit disk) ----


def _regular_star(n_points: int, inner: float) -> np.ndarray:
    ang = np.pi / 2 + np.arange(2 * n_points) * np.pi / n_points
    rad = np.where(np.arange(2 * n_points) % 2 == 0, 1.0, inner)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def _polygon(cls: int) -> np.ndarray | None:
    if cls == 1:
        s = SQUARE_HALF
        return np.array([[-s, -s], [s, -s], [s, s], [-s, s]])
    if cls == 2:
        ang = np.pi / 2 + np.arange(3) * 2 * np.pi / 3
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if cls == 4:
        return _regular_star(5, STAR_INNER)
    if cls == 5:
        a, t = 1.0, CROSS_ARM
        return np.array(
            [[-t, -a], [t, -a], [t, -t], [a, -t], [a, t], [t, t], [t, a], [-t, a], [-t, t], [-a, t], [-a, -t], [-t, -t]]
        )
    if cls == 7:
        return np.array([[DIAMOND_HALF_WIDTH, 0.0], [0.0, 1.0], [-DIAMOND_HALF_WIDTH, 0.0], [0.0, -1.0]])
    return None


def _points_in_polygon(x: np.ndarray, y: np.ndarray, poly: np.ndarray) -> np.ndarray:
    inside = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xint)
    return inside


def inside_shape(cls: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic membership test in the unit frame."""
    if cls == 0:
        return x * x + y * y <= 1.0
    if cls == 3:
        r2 = x * x + y * y
        return r2 * r2 <= x * x - y * y
    if cls == 6:
        return x * x + (y / ELLIPSE_MINOR) ** 2 <= 1.0
    poly = _polygon(cls)
    if poly is None:
        raise ValueError(f"unknown shape class {cls}")
    return _points_in_polygon(x, y, poly)


def shape_contour(cls: int, n: int = 96) -> np.ndarray:
    """Closed outline in the unit frame, ``n`` points, roughly uniform in arc length."""
    if cls in (0, 6):
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        ry = 1.0 if cls == 0 else ELLIPSE_MINOR
        return np.stack([np.cos(t), ry * np.sin(t)], axis=1)
    if cls == 3:
        t = np.linspace(0, 2 * np.pi, 4 * n, endpoint=False)
        den = 1.0 + np.sin(t) ** 2
        pts = np.stack([np.cos(t) / den, np.sin(t) * np.cos(t) / den], axis=1)
        return resample_closed(pts, n)
    poly = _polygon(cls)
    if poly is None:
        raise ValueError(f"unknown shape class {cls}")
    return resample_closed(poly, n)


def resample_closed(pts: np.ndarray, n: int) -> np.ndarray:
    closed = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0, cum[-1], n, endpoint=False)
    x = np.interp(targets, cum, closed[:, 0])
    y = np.interp(targets, cum, closed[:, 1])
    return np.stack([x, y], axis=1)


def _to_local(px, py, cx, cy, scale, rot):
    dx, dy = px - cx, py - cy
    c, s = np.cos(rot), np.sin(rot)
    return (c * dx + s * dy) / scale, (-s * dx + c * dy) / scale


def _to_image(pts: np.ndarray, cx, cy, scale, rot) -> np.ndarray:
    c, s = np.cos(rot), np.sin(rot)
    x = pts[:, 0] * scale
    y = pts[:, 1] * scale
    return np.stack([cx + c * x - s * y, cy + s * x + c * y], axis=1)


# --- scenes ----------------------------------------------------------------


@dataclass
class Instance:
    cls: int
    center: tuple[float, float]
    scale: float
    rotation: float
    color: tuple[float, float, float]


@dataclass
class SceneSpec:
    seed: int
    instances: list[Instance]
    background: tuple[float, float, float]
    image_size: int = 48


@dataclass
class SceneConfig:
    image_size: int = 48
    min_instances: int = 1
    max_instances: int = 5
    min_scale: float = 7.0
    max_scale: float = 12.0
    max_iou: float = 0.3
    max_attempts: int = 100
    noise: float = 0.03
    classes: tuple[int, ...] = tuple(range(NUM_CLASSES))
    class_hues: bool = True  # fill hue tied to the class (appearance cue), else any color
    hue_jitter: float = 0.03  # fraction of the hue circle


@dataclass
class Annotation:
    box: np.ndarray  # center form, normalized
    cls: int
    mask: np.ndarray  # bool (S, S)


@dataclass
class RenderedScene:
    image: np.ndarray  # (3, S, S) in [0, 1]
    annotations: list[Annotation]


def _approx_box(inst: Instance) -> np.ndarray:
    pts = _to_image(shape_contour(inst.cls, 256), inst.center[0], inst.center[1], inst.scale, inst.rotation)
    return np.array([pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()])


def _box_iou(a: np.ndarray, b: np.ndarray) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _color_far_from(rng: np.random.Generator, ref: np.ndarray, min_dist: float = 0.45) -> np.ndarray:
    for _ in range(100):
        c = rng.uniform(0.0, 1.0, 3)
        if np.linalg.norm(c - ref) >= min_dist:
            return c
    return 1.0 - ref


def _class_color(rng: np.random.Generator, cls: int, background: np.ndarray, jitter: float) -> np.ndarray:
    hue = (cls / NUM_CLASSES + rng.uniform(-jitter, jitter)) % 1.0
    c = np.zeros(3)
    for _ in range(100):
        c = np.array(colorsys.hsv_to_rgb(hue, rng.uniform(0.55, 1.0), rng.uniform(0.55, 1.0)))
        if np.linalg.norm(c - background) >= 0.45:
            break
    return c


def sample_scene(rng: np.random.Generator, cfg: SceneConfig = SceneConfig(), seed: int = 0) -> SceneSpec:
    """Rejection-sample placements so pairwise box IoU stays within ``cfg.max_iou``."""
    s = cfg.image_size
    if cfg.class_hues:
        background = rng.uniform(0.15, 0.85) + rng.uniform(-0.05, 0.05, 3)  # near-gray
    else:
        background = rng.uniform(0.15, 0.85, 3)
    target = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    placed: list[Instance] = []
    boxes: list[np.ndarray] = []
    for _ in range(target):
        for _attempt in range(cfg.max_attempts):
            cls = int(rng.choice(cfg.classes))
            scale = float(rng.uniform(cfg.min_scale, cfg.max_scale))
            lo, hi = scale + 1.0, s - scale - 1.0
            center = (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))
            rot = float(rng.uniform(-MAX_ROTATION, MAX_ROTATION))
            if cfg.class_hues:
                rgb = _class_color(rng, cls, background, cfg.hue_jitter)
            else:
                rgb = _color_far_from(rng, background)
            color = tuple(float(v) for v in rgb)
            inst = Instance(cls, center, scale, rot, color)
            box = _approx_box(inst)
            if all(_box_iou(box, other) <= cfg.max_iou for other in boxes):
                placed.append(inst)
                boxes.append(box)
                break
        else:
            break
    return SceneSpec(seed=seed, instances=placed, background=tuple(float(v) for v in background), image_size=s)


def render_instance_mask(inst: Instance, size: int) -> np.ndarray:
    coords = np.arange(size) + 0.5
    px, py = np.meshgrid(coords, coords)
    lx, ly = _to_local(px, py, inst.center[0], inst.center[1], inst.scale, inst.rotation)
    return inside_shape(inst.cls, lx, ly)


def mask_to_box(mask: np.ndarray) -> np.ndarray:
    """Tight center-form box of a mask, normalized by the mask size."""
    h, w = mask.shape
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    x0, x1 = cols[0] / w, (cols[-1] + 1) / w
    y0, y1 = rows[0] / h, (rows[-1] + 1) / h
    return np.array([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0])


def render_scene(spec: SceneSpec, noise: float = 0.03) -> RenderedScene:
    """Paint instances in order; later ones occlude earlier ones."""
    s = spec.image_size
    rng = np.random.default_rng(spec.seed)
    image = np.empty((3, s, s))
    image[:] = np.asarray(spec.background)[:, None, None]
    if noise:
        image += rng.normal(0.0, noise, (3, s, s))
    masks = []
    for inst in spec.instances:
        m = render_instance_mask(inst, s)
        for prev in masks:
            prev &= ~m
        masks.append(m)
        image[:, m] = np.asarray(inst.color)[:, None]
    image = np.clip(image, 0.0, 1.0)
    annotations = []
    for inst, m in zip(spec.instances, masks):
        if not m.any():
            logger.warning("dropping fully occluded %s instance in scene %d", CLASS_NAMES[inst.cls], spec.seed)
            continue
        annotations.append(Annotation(mask_to_box(m), inst.cls, m))
    return RenderedScene(image, annotations)


# --- sketches --------------------------------------------------------------


@dataclass(frozen=True)
class SketchStyle:
    name: str
    jitter: float  # std of vertex noise, unit-frame units
    dropout_max: float  # max fraction of the outline removed (one contiguous gap)
    vertices: int | None  # polygonal simplification; None keeps the dense outline
    width: float  # stroke width in pixels
    pose_jitter: bool = True


STYLE_A = SketchStyle("A", jitter=0.02, dropout_max=0.0, vertices=None, width=1.2)
STYLE_B = SketchStyle("B", jitter=0.09, dropout_max=0.3, vertices=7, width=2.6)
STYLES = {"A": STYLE_A, "B": STYLE_B}


@dataclass
class SketchSample:
    raster: np.ndarray  # (1, S', S') in [0, 1]
    cls: int
    style: str
    seed: int


def rasterize_polyline(pts: np.ndarray, size: int, width: float, closed: bool = True) -> np.ndarray:
    """Pixels whose centers lie within width/2 of any segment."""
    if closed:
        pts = np.vstack([pts, pts[:1]])
    a, b = pts[:-1], pts[1:]
    coords = np.arange(size) + 0.5
    px, py = np.meshgrid(coords, coords)
    p = np.stack([px.ravel(), py.ravel()], axis=1)
    d = b - a
    len2 = np.maximum((d * d).sum(1), 1e-12)
    t = np.clip(((p[:, None, :] - a[None]) * d[None]).sum(-1) / len2[None], 0.0, 1.0)
    proj = a[None] + t[..., None] * d[None]
    dist = np.sqrt(((p[:, None, :] - proj) ** 2).sum(-1)).min(axis=1)
    return (dist <= width / 2).reshape(size, size)


def render_sketch(
    cls: int,
    style: SketchStyle | str,
    rng: np.random.Generator,
    size: int = 32,
    seed: int = 0,
    vocabulary=None,
) -> SketchSample:
    if isinstance(style, str):
        style = STYLES[style]
    if not 0 <= cls < NUM_CLASSES:
        raise ValueError(f"unknown class {cls}")
    if vocabulary is not None and cls not in vocabulary:
        raise ValueError(f"class {cls} is not in the style {style.name} vocabulary {tuple(vocabulary)}")
    pts = shape_contour(cls, 96)
    if style.vertices:
        pts = resample_closed(pts, style.vertices + int(rng.integers(0, 3)))
    if style.jitter:
        pts = pts + rng.normal(0.0, style.jitter, pts.shape)
    closed = True
    if style.dropout_max > 0:
        dense = resample_closed(pts, 96)
        drop = int(round(rng.uniform(0.0, style.dropout_max) * len(dense)))
        start = int(rng.integers(0, len(dense)))
        keep = np.roll(dense, -start - drop, axis=0)[: len(dense) - drop]
        pts, closed = (keep, False) if drop else (dense, True)
    if style.pose_jitter:
        rot = float(rng.uniform(-MAX_ROTATION, MAX_ROTATION))
        scale = size * float(rng.uniform(0.36, 0.42))
        cx, cy = size / 2 + rng.uniform(-1.5, 1.5, 2)
    else:
        rot, scale, cx, cy = 0.0, size * 0.4, size / 2, size / 2
    img_pts = _to_image(pts, cx, cy, scale, rot)
    raster = rasterize_polyline(img_pts, size, style.width, closed=closed)
    return SketchSample(raster[None].astype(np.float64), cls, style.name, seed)


# --- file formats ----------------------------------------------------------


def write_ppm(path, image: np.ndarray) -> None:
    """(3, H, W) float image in [0, 1] to binary P6."""
    _, h, w = image.shape
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + data.tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """(H, W) float image in [0, 1] to binary P5."""
    h, w = image.shape
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())


def _read_pnm(path, magic: bytes) -> tuple[np.ndarray, int, int]:
    buf = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    if tokens[0] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} header")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit files supported")
    return np.frombuffer(buf[pos + 1 :], dtype=np.uint8), w, h


def read_ppm(path) -> np.ndarray:
    raw, w, h = _read_pnm(path, b"P6")
    return raw[: h * w * 3].reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    raw, w, h = _read_pnm(path, b"P5")
    return raw[: h * w].reshape(h, w).astype(np.float64) / 255.0


# --- datasets --------------------------------------------------------------


@dataclass(frozen=True)
class ClassSplit:
    """Q is the style-B query vocabulary, S the style-A vocabulary."""

    Q: tuple[int, ...]
    S: tuple[int, ...]

    @property
    def common(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.Q) & set(self.S)))

    @property
    def q_only(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.Q) - set(self.S)))

    @property
    def s_only(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.S) - set(self.Q)))

    def as_dict(self) -> dict[str, list[int]]:
        return {
            "Q": list(self.Q),
            "S": list(self.S),
            "Q&S": list(self.common),
            "Q-S": list(self.q_only),
            "S-Q": list(self.s_only),
        }


@dataclass
class DatasetConfig:
    seed: int = 0
    train_scenes: int = 500
    test_scenes: int = 120
    image_size: int = 48
    sketch_size: int = 32
    vocab_a: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    vocab_b: tuple[int, ...] = (2, 3, 4, 5, 6, 7)
    train_sketches_per_class: int = 60
    test_sketches_per_class: int = 20
    scene: SceneConfig = field(default_factory=SceneConfig)


class DatasetError(Exception):
    """Invalid or inconsistent dataset on disk."""


def item_rng(master_seed: int, kind: str, index: int) -> tuple[np.random.Generator, int]:
    """Independent per-item generator derived from (master seed, item kind, index)."""
    kind_code = int.from_bytes(kind.encode()[:8].ljust(8, b"\0"), "little")
    ss = np.random.SeedSequence([master_seed, kind_code, index])
    item_seed = int(ss.generate_state(1, dtype=np.uint32)[0])
    return np.random.default_rng(ss), item_seed


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def build_dataset(out_dir, cfg: DatasetConfig = DatasetConfig()) -> "Dataset":
    """Render every scene and sketch to ``out_dir`` and write the manifest."""
    root = Path(out_dir)
    for sub in ("images", "masks", "sketches/A", "sketches/B"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    scene_cfg = SceneConfig(**{**asdict(cfg.scene), "image_size": cfg.image_size})
    scenes = []
    total = cfg.train_scenes + cfg.test_scenes
    for i in range(total):
        rng, seed = item_rng(cfg.seed, "scene", i)
        spec = sample_scene(rng, scene_cfg, seed=seed)
        rendered = render_scene(spec, scene_cfg.noise)
        name = f"scene_{i:05d}"
        write_ppm(root / "images" / f"{name}.ppm", rendered.image)
        instances = []
        for k, ann in enumerate(rendered.annotations):
            mpath = f"masks/{name}_{k}.pgm"
            write_pgm(root / mpath, ann.mask.astype(np.float64))
            instances.append({"class": ann.cls, "box": [float(v) for v in ann.box], "mask": mpath})
        scenes.append(
            {
                "id": i,
                "split": "train" if i < cfg.train_scenes else "test",
                "seed": seed,
                "image": f"images/{name}.ppm",
                "instances": instances,
            }
        )
    sketches = []
    for style, vocab in (("A", cfg.vocab_a), ("B", cfg.vocab_b)):
        for cls in vocab:
            n_tr, n_te = cfg.train_sketches_per_class, cfg.test_sketches_per_class
            for j in range(n_tr + n_te):
                rng, seed = item_rng(cfg.seed, f"sk{style}{cls}", j)
                sample = render_sketch(cls, style, rng, cfg.sketch_size, seed=seed, vocabulary=vocab)
                split = "train" if j < n_tr else "test"
                path = f"sketches/{style}/c{cls}_{split}_{j:04d}.pgm"
                write_pgm(root / path, sample.raster[0])
                sketches.append({"path": path, "class": cls, "style": style, "split": split, "seed": seed})
    split = ClassSplit(Q=tuple(cfg.vocab_b), S=tuple(cfg.vocab_a))
    manifest = {
        "version": MANIFEST_VERSION,
        "image_size": cfg.image_size,
        "sketch_size": cfg.sketch_size,
        "classes": list(CLASS_NAMES),
        "styles": ["A", "B"],
        "vocabularies": {"A": list(cfg.vocab_a), "B": list(cfg.vocab_b)},
        "config": _config_dict(cfg),
        "scenes": scenes,
        "sketches": sketches,
        "splits": split.as_dict(),
    }
    (root / MANIFEST_NAME).write_text(_dump_json(manifest))
    return load_dataset(root)


def _config_dict(cfg: DatasetConfig) -> dict:
    d = asdict(cfg)
    for k in ("vocab_a", "vocab_b"):
        d[k] = list(d[k])
    d["scene"]["classes"] = list(d["scene"]["classes"])
    return d


@dataclass
class Scene:
    id: int
    split: str
    image_path: Path
    classes: np.ndarray
    boxes: np.ndarray  # (n, 4) center form
    mask_paths: list[Path]


@dataclass
class Sketch:
    path: Path
    cls: int
    style: str
    split: str
    seed: int


class Dataset:
    """Validated manifest plus lazily loaded, cached pixel data."""

    def __init__(self, root, manifest: dict):
        self.root = Path(root)
        self.manifest = manifest
        self.image_size = int(manifest["image_size"])
        self.sketch_size = int(manifest["sketch_size"])
        self.vocabularies = {k: tuple(v) for k, v in manifest["vocabularies"].items()}
        sp = manifest["splits"]
        self.class_split = ClassSplit(Q=tuple(sp["Q"]), S=tuple(sp["S"]))
        self.scenes = [
            Scene(
                s["id"],
                s["split"],
                self.root / s["image"],
                np.array([inst["class"] for inst in s["instances"]], dtype=int),
                np.array([inst["box"] for inst in s["instances"]], dtype=np.float64).reshape(-1, 4),
                [self.root / inst["mask"] for inst in s["instances"]],
            )
            for s in manifest["scenes"]
        ]
        self.sketches = [
            Sketch(self.root / k["path"], int(k["class"]), k["style"], k["split"], int(k["seed"]))
            for k in manifest["sketches"]
        ]
        self._images: dict[int, np.ndarray] = {}
        self._masks: dict[int, np.ndarray] = {}
        self._sketch_px: dict[Path, np.ndarray] = {}

    def scene_ids(self, split: str) -> list[int]:
        return [s.id for s in self.scenes if s.split == split]

    def image(self, i: int) -> np.ndarray:
        if i not in self._images:
            self._images[i] = read_ppm(self.scenes[i].image_path)
        return self._images[i]

    def masks(self, i: int) -> np.ndarray:
        """(n, S, S) boolean instance masks of scene ``i``."""
        if i not in self._masks:
            s = self.image_size
            paths = self.scenes[i].mask_paths
            self._masks[i] = (
                np.stack([read_pgm(p) > 0.5 for p in paths]) if paths else np.zeros((0, s, s), dtype=bool)
            )
        return self._masks[i]

    def sketch_pixels(self, sk: Sketch) -> np.ndarray:
        if sk.path not in self._sketch_px:
            self._sketch_px[sk.path] = read_pgm(sk.path)[None]
        return self._sketch_px[sk.path]

    def sketch_pool(self, style: str, split: str, cls: int | None = None) -> list[Sketch]:
        return [k for k in self.sketches if k.style == style and k.split == split and (cls is None or k.cls == cls)]


def load_dataset(path) -> Dataset:
    """Load and validate: every file exists, splits are disjoint, vocabularies agree."""
    root = Path(path)
    mpath = root / MANIFEST_NAME if root.is_dir() else root
    root = mpath.parent
    if not mpath.exists():
        raise DatasetError(f"missing manifest {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"corrupt manifest {mpath}: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"unsupported manifest version {manifest.get('version')}")
    for s in manifest["scenes"]:
        if s["split"] not in ("train", "test"):
            raise DatasetError(f"scene {s['id']}: bad split {s['split']!r}")
        for rel in [s["image"]] + [inst["mask"] for inst in s["instances"]]:
            if not (root / rel).exists():
                raise DatasetError(f"missing file {rel}")
    seen: dict[str, str] = {}
    seeds: dict[tuple, str] = {}
    for k in manifest["sketches"]:
        if not (root / k["path"]).exists():
            raise DatasetError(f"missing file {k['path']}")
        if k["class"] not in manifest["vocabularies"][k["style"]]:
            raise DatasetError(f"{k['path']}: class {k['class']} not in style {k['style']} vocabulary")
        if k["path"] in seen:
            raise DatasetError(f"sketch {k['path']} listed in both {seen[k['path']]} and {k['split']} splits")
        seen[k["path"]] = k["split"]
        key = (k["style"], k["class"], k["seed"])
        if key in seeds and seeds[key] != k["split"]:
            raise DatasetError(f"sketch seed {key} appears in both train and test splits")
        seeds[key] = k["split"]
    ids = [s["id"] for s in manifest["scenes"]]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate scene ids across splits")
    return Dataset(root, manifest)
