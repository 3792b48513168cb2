"""Command implementations behind the ``sgol`` CLI.

Each command resolves a config (defaults, then an optional JSON file, then
explicit overrides), runs, and writes into its output directory:

* ``config.json``: the resolved config, paths included;
* ``report.json``: metrics, the config digest and an environment stamp.
  It is a pure function of the config and the input files, so re-runs are
  byte-identical;
* ``run.json``: wall time and other facts that vary between runs;
* ``pr_<mode>_<split>_c<class>.csv`` sidecars for evaluation commands.

The digest hashes the config with path values removed plus the SHA-256 of
every input file, so moving a dataset does not change it.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import platform
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import nn
from .data import DatasetConfig, DatasetError, _config_dict, build_dataset, load_dataset
from .evaluation import (
    COCO_THRESHOLDS,
    APResult,
    ConditionedPipeline,
    EvalConfig,
    T2BPipeline,
    cross_dataset_evaluate,
    pr_curve_rows,
    sgol_evaluate,
    sketch_pools,
)
from .matching import LossWeights
from .model import PretrainedPair, SketchClassifier, SketchDETR, SketchDETRConfig, load_model, save_model
from .training import (
    NonFiniteLossError,
    TrainConfig,
    classifier_accuracy,
    conditioned_config,
    conditioned_samples,
    fit,
    init_from_pretrained,
    multiclass_config,
    multiclass_samples,
    train_classifier,
)

SCHEMA_VERSION = 1
VARIANTS = ("multiclass", "sketch_detr_query", "sketch_detr_concat", "sketch_classifier")
CONDITIONING = {"sketch_detr_query": "object_query", "sketch_detr_concat": "encoder_concat"}
PATH_KEYS = ("dataset", "out", "detector", "classifier", "checkpoint")
EXECUTION_KEYS = ("threads",)  # cannot change results, so they stay out of the digest


class CommandError(Exception):
    code = 1


class UsageError(CommandError):
    code = 1


class MissingInputError(CommandError):
    code = 2


class NumericError(CommandError):
    code = 3


class EmptySplitError(CommandError):
    code = 4


class VerificationError(CommandError):
    code = 5


# --- configs -----------------------------------------------------------------

_MODEL_KEYS = (
    "d",
    "num_queries",
    "heads",
    "enc_layers",
    "dec_layers",
    "ffn_dim",
    "backbone_channels",
    "sketch_channels",
    "mask_hidden",
    "pos_temperature",
    "query_init_std",
    "coord_channels",
    "box_reference",
)


def _model_defaults() -> dict:
    d = SketchDETRConfig().to_dict()
    return {k: d[k] for k in _MODEL_KEYS}


GEN_DEFAULTS = {"out": None, **_config_dict(DatasetConfig())}

TRAIN_DEFAULTS = {
    "seed": 0,
    "dataset": None,
    "out": None,
    "variant": "sketch_detr_concat",
    "style_train": "A",
    "epochs": 90,
    "pretrain_epochs": 50,  # detector stage of --pretrain-first
    "mask_epochs": 45,  # half the detection epochs
    "classifier_epochs": 15,
    "batch_size": 8,
    "classifier_batch_size": 32,
    "lr": 1e-3,
    "classifier_lr": 2e-3,
    "weight_decay": 1e-4,
    "clip_norm": 0.1,
    "lr_drop": 0.7,  # fraction of a stage's epochs after which lr is scaled by 0.1
    "hflip": True,
    "freeze_policy": None,  # None: "backbones" for conditioned variants, "none" otherwise
    "mask": False,
    "pretrain_first": False,
    "detector": None,
    "classifier": None,
    "checkpoint": None,
    "model": _model_defaults(),
    "weights": asdict(LossWeights()),
}

EVAL_DEFAULTS = {
    "seed": 0,
    "dataset": None,
    "out": None,
    "checkpoint": None,
    "classifier": None,
    "style_train": None,
    "style_eval": None,
    "upper_bound": False,
    "mask": False,
    "include_s_only": False,
    "threads": 1,
    "eval": {"max_sketches": None, "negatives_ratio": 1.0, "pool": "class", "iou_thresholds": list(COCO_THRESHOLDS)},
}

VERIFY_DEFAULTS = {"seed": 0, "out": None}

DEFAULTS = {
    "gen": GEN_DEFAULTS,
    "train": TRAIN_DEFAULTS,
    "eval": EVAL_DEFAULTS,
    "t2b": EVAL_DEFAULTS,
    "cross": EVAL_DEFAULTS,
    "verify": VERIFY_DEFAULTS,
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise UsageError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def resolve_config(command: str, file: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON config file, then non-None overrides."""
    cfg = copy.deepcopy(DEFAULTS[command])
    if file is not None:
        path = Path(file)
        if not path.exists():
            raise MissingInputError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {path} must hold an object")
        cfg = _merge(cfg, loaded)
    cfg = _merge(cfg, {k: v for k, v in (overrides or {}).items() if v is not None})
    return cfg


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(command: str, cfg: dict, inputs: dict[str, str]) -> str:
    body = {k: v for k, v in cfg.items() if k not in PATH_KEYS + EXECUTION_KEYS}
    return hashlib.sha256(_canonical({"command": command, "config": body, "inputs": inputs}).encode()).hexdigest()


def environment_stamp() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "machine": platform.machine()}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n")


def _finish(command: str, cfg: dict, inputs: dict[str, str], metrics: dict, t0: float, extra_run: dict | None = None) -> dict:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config_digest": config_digest(command, cfg, inputs),
        "inputs": inputs,
        "metrics": metrics,
        "environment": environment_stamp(),
    }
    _write_json(out / "config.json", cfg)
    _write_json(out / "report.json", report)
    _write_json(out / "run.json", {"command": command, "wall_time_s": round(time.perf_counter() - t0, 3), **(extra_run or {})})
    return report


def _need(cfg: dict, key: str, flag: str | None = None) -> None:
    if cfg.get(key) in (None, ""):
        raise UsageError(f"missing required option --{(flag or key).replace('_', '-')}")


def _dataset(cfg: dict):
    _need(cfg, "dataset")
    try:
        return load_dataset(cfg["dataset"])
    except DatasetError as exc:
        raise MissingInputError(str(exc)) from exc


def _manifest_path(ds) -> Path:
    return ds.root / "manifest.json"


def _load(path, kinds: tuple[str, ...], what: str):
    if path is None:
        raise UsageError(f"missing {what} checkpoint")
    try:
        model, manifest = load_model(path)
    except FileNotFoundError as exc:
        raise MissingInputError(str(exc)) from exc
    if manifest["kind"] not in kinds:
        raise UsageError(f"{path}: expected a {' or '.join(kinds)} checkpoint, got {manifest['kind']}")
    return model, manifest


def _ckpt_digest(path) -> str:
    return file_digest(Path(path).with_suffix(".ckpt"))


# --- gen ---------------------------------------------------------------------


def cmd_gen(cfg: dict) -> dict:
    _need(cfg, "out")
    t0 = time.perf_counter()
    body = {k: v for k, v in cfg.items() if k != "out"}
    try:
        dcfg = _dataset_config(body)
        ds = build_dataset(cfg["out"], dcfg)
    except OSError as exc:
        raise MissingInputError(f"cannot write dataset: {exc}") from exc
    summary = {
        "classes": len(ds.manifest["classes"]),
        "scenes": {s: len(ds.scene_ids(s)) for s in ("train", "test")},
        "instances": int(sum(len(s.classes) for s in ds.scenes)),
        "sketches": {st: {sp: len(ds.sketch_pool(st, sp)) for sp in ("train", "test")} for st in ("A", "B")},
        "splits": {k: v for k, v in ds.class_split.as_dict().items() if k in ("Q&S", "Q-S", "S-Q")},
    }
    _finish("gen", cfg, {}, summary, t0)
    summary["wall_time_s"] = round(time.perf_counter() - t0, 3)
    return summary


def _dataset_config(body: dict) -> DatasetConfig:
    from .data import SceneConfig

    b = dict(body)
    scene = SceneConfig(**{**b.pop("scene"), "classes": tuple(body["scene"]["classes"])})
    return DatasetConfig(**{**b, "vocab_a": tuple(b["vocab_a"]), "vocab_b": tuple(b["vocab_b"]), "scene": scene})


# --- train -------------------------------------------------------------------


def _seed(cfg: dict, stage: str) -> int:
    ss = np.random.SeedSequence([int(cfg["seed"]), int.from_bytes(stage.encode()[:8].ljust(8, b"\0"), "little")])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _base_model_config(cfg: dict, ds) -> SketchDETRConfig:
    most = max((len(s.classes) for s in ds.scenes), default=0)
    if cfg["model"]["num_queries"] < most:
        raise UsageError(f"num_queries {cfg['model']['num_queries']} is below the {most} instances of the busiest scene")
    try:
        return SketchDETRConfig(**cfg["model"], image_size=ds.image_size, sketch_size=ds.sketch_size)
    except ValueError as exc:
        raise UsageError(f"invalid model config: {exc}") from exc


def _train_config(cfg: dict, policy: str, epochs: int, masks: bool = False) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]),
        weight_decay=float(cfg["weight_decay"]),
        clip_norm=float(cfg["clip_norm"]),
        freeze_policy=policy,
        masks=masks,
        hflip=bool(cfg["hflip"]),
        lr_drop=None if cfg["lr_drop"] is None else int(round(float(cfg["lr_drop"]) * epochs)),
        weights=LossWeights(**cfg["weights"]),
    )


def _history(hist) -> dict:
    keys = list(hist.epochs[0]) if hist.epochs else []
    return {k: [e[k] for e in hist.epochs] for k in keys}


def _manifest(kind: str, model_cfg: SketchDETRConfig, vocabulary, style: str | None, stage: str, policy: str | None) -> dict:
    return {
        "kind": kind,
        "config": model_cfg.to_dict(),
        "vocabulary": [int(v) for v in vocabulary],
        "style_train": style,
        "stage": stage,
        "freeze_policy": policy,
    }


def train_detector(cfg: dict, ds, out: Path) -> tuple[SketchDETR, dict, dict]:
    """Multi-class detector over every scene class (the T2B detector)."""
    classes = sorted({int(c) for s in ds.scenes for c in s.classes})
    n = max(classes) + 1 if classes else 1
    mcfg = multiclass_config(_base_model_config(cfg, ds), n, mask=False)
    model = SketchDETR(mcfg, np.random.default_rng(_seed(cfg, "det-init")))
    policy = cfg["freeze_policy"] or "none"
    hist = _fit(model, ds, lambda rng: multiclass_samples(ds), _train_config(cfg, policy, int(cfg["epochs"])), _seed(cfg, "det-train"))
    manifest = _manifest("multiclass", mcfg, range(n), None, "detection", policy)
    save_model(out / "model", model, manifest)
    return model, manifest, {"loss": _history(hist), "seconds": hist.seconds}


def train_sketch_classifier(cfg: dict, ds, out: Path) -> tuple[SketchClassifier, dict, dict]:
    style = cfg["style_train"]
    if style not in ds.vocabularies:
        raise UsageError(f"unknown sketch style {style!r}")
    base = _base_model_config(cfg, ds)
    clf = SketchClassifier(base, ds.vocabularies[style], np.random.default_rng(_seed(cfg, "clf-init")))
    t0 = time.perf_counter()
    losses = train_classifier(
        clf,
        ds,
        style,
        epochs=int(cfg["classifier_epochs"]),
        batch_size=int(cfg["classifier_batch_size"]),
        lr=float(cfg["classifier_lr"]),
        seed=_seed(cfg, "clf-train"),
    )
    if not np.all(np.isfinite(losses)):
        raise NumericError("non-finite classifier loss")
    manifest = _manifest("sketch_classifier", base, clf.vocabulary, style, "classification", None)
    save_model(out / "model", clf, manifest)
    metrics = {
        "loss": {"cross_entropy": losses},
        "accuracy": {s: classifier_accuracy(clf, ds, s) for s in ds.vocabularies if set(ds.vocabularies[s]) <= set(clf.vocabulary)},
        "seconds": time.perf_counter() - t0,
    }
    return clf, manifest, metrics


def train_conditioned(cfg: dict, ds, out: Path, detector: SketchDETR, classifier: SketchClassifier) -> tuple[SketchDETR, dict, dict]:
    style = cfg["style_train"]
    mode = CONDITIONING[cfg["variant"]]
    base = _base_model_config(cfg, ds)
    mcfg = conditioned_config(base, mode, mask=False)
    model = SketchDETR(mcfg, np.random.default_rng(_seed(cfg, "cond-init")))
    try:
        init_from_pretrained(model, detector, classifier)
    except Exception as exc:  # shape or name mismatch between configs
        raise UsageError(f"pretrained checkpoints do not fit the model config: {exc}") from exc
    policy = cfg["freeze_policy"] or "backbones"
    make = lambda rng: conditioned_samples(ds, style, rng)
    hist = _fit(model, ds, make, _train_config(cfg, policy, int(cfg["epochs"])), _seed(cfg, "cond-train"))
    manifest = _manifest(cfg["variant"], mcfg, ds.vocabularies[style], style, "detection", policy)
    save_model(out / "model", model, manifest)
    return model, manifest, {"loss": _history(hist), "seconds": hist.seconds}


def finetune_masks(cfg: dict, ds, out: Path, det_model: SketchDETR, det_manifest: dict) -> tuple[SketchDETR, dict, dict]:
    """Add a mask head to a trained detector and train only that head."""
    mdict = dict(det_manifest["config"], mask_head_enabled=True)
    mcfg = SketchDETRConfig(**mdict)
    model = SketchDETR(mcfg, np.random.default_rng(_seed(cfg, "mask-init")))
    model.load_state_dict(det_model.state_dict(), strict=False)
    style = det_manifest.get("style_train")
    if det_manifest["kind"] == "multiclass":
        make = lambda rng: multiclass_samples(ds)
    else:
        make = lambda rng: conditioned_samples(ds, style, rng)
    tcfg = _train_config(cfg, "mask_only", int(cfg["mask_epochs"]), masks=True)
    hist = _fit(model, ds, make, tcfg, _seed(cfg, "mask-train"))
    manifest = dict(det_manifest, config=mcfg.to_dict(), stage="mask", freeze_policy="mask_only")
    save_model(out / "model", model, manifest)
    return model, manifest, {"loss": _history(hist), "seconds": hist.seconds}


def _fit(model, ds, make, tcfg, seed):
    try:
        return fit(model, ds, make, tcfg, seed)
    except NonFiniteLossError as exc:
        raise NumericError(str(exc)) from exc


def cmd_train(cfg: dict) -> dict:
    t0 = time.perf_counter()
    _need(cfg, "out")
    variant = cfg["variant"]
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    ds = _dataset(cfg)
    out = Path(cfg["out"])
    inputs = {"dataset": file_digest(_manifest_path(ds))}
    metrics: dict = {"variant": variant}
    if cfg["mask"] and variant == "sketch_classifier":
        raise UsageError("the sketch classifier has no mask head")

    if cfg["mask"] and not cfg["pretrain_first"]:
        # mask-head fine-tuning starts from a trained detection checkpoint of this variant
        if cfg["checkpoint"] is None:
            raise MissingInputError("mask training needs a detection checkpoint (--checkpoint) or --pretrain-first")
        kind = variant
        det, det_manifest = _load(cfg["checkpoint"], (kind,), "detection")
        inputs["checkpoint"] = _ckpt_digest(cfg["checkpoint"])
        _, _, m = finetune_masks(cfg, ds, out, det, det_manifest)
        metrics["mask"] = m
        return _finish("train", cfg, inputs, _strip_seconds(metrics), t0, {"seconds": _seconds(metrics)})

    timings = {}
    if variant == "multiclass":
        det, det_manifest, m = train_detector(cfg, ds, out)
        metrics["detection"] = m
    elif variant == "sketch_classifier":
        _, _, m = train_sketch_classifier(cfg, ds, out)
        metrics["classification"] = m
    else:
        detector, classifier = _pretrained(cfg, ds, out, inputs, metrics)
        det, det_manifest, m = train_conditioned(cfg, ds, out, detector, classifier)
        metrics["detection"] = m
    if cfg["mask"]:
        _, _, m = finetune_masks(cfg, ds, out, det, det_manifest)
        metrics["mask"] = m
    return _finish("train", cfg, inputs, _strip_seconds(metrics), t0, {"seconds": _seconds(metrics)})


def _strip_seconds(metrics: dict) -> dict:
    """Wall times vary between runs, so they go to run.json, not the report."""
    return {k: _strip_seconds(v) if isinstance(v, dict) else v for k, v in metrics.items() if k != "seconds"}


def _seconds(metrics: dict) -> dict:
    out = {}
    for k, v in metrics.items():
        if isinstance(v, dict):
            if "seconds" in v:
                out[k] = v["seconds"]
            else:
                nested = _seconds(v)
                if nested:
                    out[k] = nested
    return out


def _pretrained(cfg: dict, ds, out: Path, inputs: dict, metrics: dict):
    if cfg["pretrain_first"]:
        pre = out / "pretrain"
        dcfg = dict(cfg, freeze_policy=None, epochs=cfg["pretrain_epochs"])
        detector, _, m_det = train_detector(dcfg, ds, pre / "detector")
        classifier, _, m_clf = train_sketch_classifier(cfg, ds, pre / "classifier")
        metrics["pretrain"] = {"detector": m_det, "classifier": m_clf}
        return detector, classifier
    if cfg["detector"] is None or cfg["classifier"] is None:
        raise MissingInputError("conditioned training needs --detector and --classifier checkpoints, or --pretrain-first")
    detector, _ = _load(cfg["detector"], ("multiclass",), "detector")
    classifier, cm = _load(cfg["classifier"], ("sketch_classifier",), "classifier")
    if cm["style_train"] != cfg["style_train"]:
        raise UsageError(f"classifier was trained on style {cm['style_train']}, not {cfg['style_train']}")
    inputs["detector"] = _ckpt_digest(cfg["detector"])
    inputs["classifier"] = _ckpt_digest(cfg["classifier"])
    return detector, classifier


# --- eval / t2b / cross ------------------------------------------------------


def _eval_config(cfg: dict, mode: str) -> EvalConfig:
    e = cfg["eval"]
    return EvalConfig(
        iou_thresholds=tuple(e["iou_thresholds"]),
        mode=mode,
        pool=e["pool"],
        negatives_ratio=float(e["negatives_ratio"]),
        seed=int(cfg["seed"]),
        max_sketches=e["max_sketches"],
    )


def _modes(model: SketchDETR, cfg: dict) -> list[str]:
    has_mask = model.cfg.mask_head_enabled
    if cfg["mask"] and not has_mask:
        raise UsageError("--mask requested but the checkpoint has no mask head")
    return ["box", "mask"] if has_mask else ["box"]


def _write_curves(out: Path, name: str, mode: str, res: APResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for cls, ranked in sorted(res.curves.items()):
        n_gt = res.counts[cls]["gt"]
        with open(out / f"pr_{mode}_{name}_c{cls}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "score", "tp", "precision", "recall"])
            for row in pr_curve_rows(ranked, n_gt):
                w.writerow([row[0], repr(float(row[1])), row[2], repr(float(row[3])), repr(float(row[4]))])


def _style_classes(ds, style: str, vocabulary) -> list[int]:
    if style not in ds.vocabularies:
        raise UsageError(f"unknown sketch style {style!r}")
    classes = [c for c in ds.vocabularies[style] if c in set(vocabulary)]
    if not classes:
        raise EmptySplitError(f"no classes shared by the model vocabulary and style {style}")
    return classes


def _run_eval(pipeline, ds, classes, style, cfg, modes, out, name="all") -> dict:
    metrics = {}
    pools = sketch_pools(ds, style, classes)
    if any(not p for p in pools.values()) or not ds.scene_ids("test"):
        raise EmptySplitError(f"empty test split for style {style}")
    for mode in modes:
        res = sgol_evaluate(pipeline, ds, pools, _eval_config(cfg, mode), threads=int(cfg["threads"]))
        metrics[mode] = res.to_dict()
        _write_curves(out, name, mode, res)
    return metrics


def cmd_eval(cfg: dict) -> dict:
    t0 = time.perf_counter()
    _need(cfg, "out")
    ds = _dataset(cfg)
    model, manifest = _load(cfg["checkpoint"], tuple(CONDITIONING), "conditioned model")
    style = cfg["style_eval"] or manifest["style_train"]
    classes = _style_classes(ds, style, manifest["vocabulary"])
    inputs = {"dataset": file_digest(_manifest_path(ds)), "checkpoint": _ckpt_digest(cfg["checkpoint"])}
    metrics = {"variant": manifest["kind"], "style_eval": style, "classes": classes}
    metrics.update(_run_eval(ConditionedPipeline(model, ds), ds, classes, style, cfg, _modes(model, cfg), Path(cfg["out"])))
    return _finish("eval", cfg, inputs, metrics, t0)


def _t2b_pipeline(cfg: dict, ds, inputs: dict):
    det, det_manifest = _load(cfg["checkpoint"], ("multiclass",), "detector")
    inputs["checkpoint"] = _ckpt_digest(cfg["checkpoint"])
    clf = None
    vocabulary = det_manifest["vocabulary"]
    train_style = None
    if cfg["classifier"] is not None:
        clf, cm = _load(cfg["classifier"], ("sketch_classifier",), "classifier")
        inputs["classifier"] = _ckpt_digest(cfg["classifier"])
        vocabulary = [c for c in cm["vocabulary"] if c in set(vocabulary)]
        train_style = cm["style_train"]
    elif not cfg["upper_bound"]:
        raise MissingInputError("t2b needs a --classifier checkpoint unless --upper-bound is given")
    if clf is None:
        # the perfect classifier never consults the sketch; any vocabulary works
        clf = SketchClassifier(det.cfg, vocabulary, np.random.default_rng(0))
    pair = PretrainedPair(det, clf)
    return T2BPipeline(pair, ds, upper_bound=bool(cfg["upper_bound"])), det, vocabulary, train_style


def cmd_t2b(cfg: dict) -> dict:
    t0 = time.perf_counter()
    _need(cfg, "out")
    ds = _dataset(cfg)
    inputs = {"dataset": file_digest(_manifest_path(ds))}
    pipe, det, vocabulary, train_style = _t2b_pipeline(cfg, ds, inputs)
    style = cfg["style_eval"] or train_style or "A"
    classes = _style_classes(ds, style, vocabulary)
    metrics = {"upper_bound": bool(cfg["upper_bound"]), "style_eval": style, "classes": classes}
    metrics.update(_run_eval(pipe, ds, classes, style, cfg, _modes(det, cfg), Path(cfg["out"])))
    return _finish("t2b", cfg, inputs, metrics, t0)


def cmd_cross(cfg: dict) -> dict:
    t0 = time.perf_counter()
    _need(cfg, "out")
    ds = _dataset(cfg)
    inputs = {"dataset": file_digest(_manifest_path(ds))}
    _need(cfg, "checkpoint")
    try:
        kind = json.loads(Path(cfg["checkpoint"]).with_suffix(".json").read_text())["kind"]
    except FileNotFoundError as exc:
        raise MissingInputError(f"missing checkpoint manifest: {exc}") from exc
    if kind == "multiclass":
        pipe, model, vocabulary, train_style = _t2b_pipeline(cfg, ds, inputs)
        method = "t2b_upper_bound" if cfg["upper_bound"] else "t2b"
    else:
        model, manifest = _load(cfg["checkpoint"], tuple(CONDITIONING), "conditioned model")
        inputs["checkpoint"] = _ckpt_digest(cfg["checkpoint"])
        pipe = ConditionedPipeline(model, ds)
        train_style = manifest["style_train"]
        method = manifest["kind"]
    train_style = cfg["style_train"] or train_style or "A"
    eval_style = cfg["style_eval"] or ("B" if train_style == "A" else "A")
    for s in (train_style, eval_style):
        if s not in ds.vocabularies:
            raise UsageError(f"unknown sketch style {s!r}")
    metrics: dict = {"method": method, "style_train": train_style, "style_eval": eval_style, "splits": {}}
    out = Path(cfg["out"])
    for mode in _modes(model, cfg):
        try:
            res = cross_dataset_evaluate(
                pipe, ds, eval_style, _eval_config(cfg, mode), bool(cfg["include_s_only"]), train_style, int(cfg["threads"])
            )
        except ValueError as exc:
            raise EmptySplitError(str(exc)) from exc
        for name, r in res.splits.items():
            metrics["splits"].setdefault(name, {})[mode] = r.to_dict()
            _write_curves(out, name.replace("&", "and").replace("-", "minus"), mode, r)
    return _finish("cross", cfg, inputs, metrics, t0)


# --- verify ------------------------------------------------------------------


def cmd_verify(cfg: dict) -> dict:
    from .verify import run_suites

    t0 = time.perf_counter()
    results = run_suites(seed=int(cfg["seed"]))
    report = {"passed": all(r.passed for r in results), "cases": [r.as_dict() for r in results]}
    if cfg.get("out"):
        timings = {f"{r.suite}/{r.name}": r.seconds for r in results}
        _finish("verify", cfg, {}, report, t0, {"seconds": timings})
    report["wall_time_s"] = round(time.perf_counter() - t0, 3)
    return report


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "t2b": cmd_t2b, "cross": cmd_cross, "verify": cmd_verify}


def run(command: str, config_file=None, overrides: dict | None = None) -> dict:
    cfg = resolve_config(command, config_file, overrides)
    return COMMANDS[command](cfg)


def load_report(out) -> dict:
    return json.loads((Path(out) / "report.json").read_text())


__all__ = [
    "run",
    "resolve_config",
    "config_digest",
    "load_report",
    "CommandError",
    "UsageError",
    "MissingInputError",
    "NumericError",
    "EmptySplitError",
    "VerificationError",
    "SCHEMA_VERSION",
    "VARIANTS",
]
