"""Oracle suites behind ``sgol verify``: every case compares an implementation to an independent answer."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geometry
from . import tensor as T
from .evaluation import GroundTruth, average_precision, brute_force_ap, match_dets, rank_order
from .losses import dice_loss, focal_loss, hungarian_loss, match
from .matching import LossWeights, brute_force_assignment, hungarian
from .model import SketchDETR, detr_forward, micro_config
from .structures import Detection, Targets
from .tensor import Tensor

OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4
VALUE_TOLERANCE = 1e-9


@dataclass
class CaseResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return {"suite": self.suite, "name": self.name, "passed": self.passed, "detail": self.detail}


def _case(suite: str, name: str, fn: Callable[[], tuple[bool, str]]) -> CaseResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing case is a failing case
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CaseResult(suite, name, bool(ok), detail, time.perf_counter() - t0)


# --- assignment --------------------------------------------------------------


def assignment_suite(seed: int = 0, n_matrices: int = 200) -> list[CaseResult]:
    rng = np.random.default_rng(seed)
    shapes = [(n, m) for m in range(1, 9) for n in range(0, min(m, 6) + 1)]

    def random_costs():
        bad = []
        for k in range(n_matrices):
            n, m = shapes[k % len(shapes)]
            c = rng.normal(size=(n, m))
            h, b = hungarian(c), brute_force_assignment(c)
            if h.cost != b.cost:
                bad.append(f"{n}x{m}: {h.cost} != {b.cost}")
        return not bad, "; ".join(bad[:3]) or f"{n_matrices} matrices"

    def integer_ties():
        bad = []
        for k in range(n_matrices):
            n, m = shapes[k % len(shapes)]
            c = rng.integers(0, 3, size=(n, m)).astype(float)
            h, b = hungarian(c), brute_force_assignment(c)
            if h.cost != b.cost or h.cols != b.cols:
                bad.append(f"{c.tolist()}: {h.cols} vs {b.cols}")
        return not bad, "; ".join(bad[:3]) or f"{n_matrices} tied matrices"

    def hand():
        a = hungarian([[4, 1, 3], [2, 1, 6]])
        return a.as_dict() == {0: 1, 1: 0} and a.cost == 3, f"{a.as_dict()} cost {a.cost}"

    return [
        _case("assignment", "random_vs_brute_force", random_costs),
        _case("assignment", "integer_ties_vs_brute_force", integer_ties),
        _case("assignment", "hand_2x3", hand),
    ]


# --- gradients ---------------------------------------------------------------


def _leaf(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def _op_cases(rng) -> dict[str, tuple[list[Tensor], Callable[[], Tensor]]]:
    def r(*shape, positive=False):
        x = rng.normal(size=shape)
        return _leaf(np.abs(x) + 0.5 if positive else x)

    w = lambda *shape: Tensor(np.arange(float(np.prod(shape))).reshape(shape) / 7.0)
    cases = {}
    a, b = r(2, 3), r(3)
    cases["add"] = ([a, b], lambda a=a, b=b: (T.add(a, b) ** 2).sum())
    a, b = r(2, 3), r(2, 1)
    cases["sub"] = ([a, b], lambda a=a, b=b: (T.sub(a, b) ** 2).sum())
    a, b = r(2, 3), r(1, 3)
    cases["mul"] = ([a, b], lambda a=a, b=b: (T.mul(a, b) * w(2, 3)).sum())
    a, b = r(4), r(4, positive=True)
    cases["div"] = ([a, b], lambda a=a, b=b: T.div(a, b).sum())
    for name, fn, pos in [
        ("relu", T.relu, False),
        ("sigmoid", T.sigmoid, False),
        ("log_sigmoid", T.log_sigmoid, False),
        ("exp", T.exp, False),
        ("neg", T.neg, False),
        ("abs", T.abs_, False),
        ("log", T.log, True),
        ("sqrt", T.sqrt, True),
    ]:
        a = r(6, positive=pos)
        cases[name] = ([a], lambda a=a, fn=fn: (fn(a) * w(6)).sum())
    a = r(6, positive=True)
    cases["power"] = ([a], lambda a=a: T.power(a, 2.5).sum())
    a, b = r(6), r(6)
    cases["maximum"] = ([a, b], lambda a=a, b=b: (T.maximum(a, b) ** 2).sum())
    a, b = r(6), r(6)
    cases["minimum"] = ([a, b], lambda a=a, b=b: (T.minimum(a, b) ** 2).sum())
    a, b = r(6), r(6)
    cond = rng.random(6) > 0.5
    cases["where"] = ([a, b], lambda a=a, b=b: (T.where(cond, a, b) * w(6)).sum())
    a, b = r(2, 3, 4), r(4, 2)
    cases["matmul"] = ([a, b], lambda a=a, b=b: (T.matmul(a, b) ** 2).sum())
    a = r(3, 4)
    cases["sum"] = ([a], lambda a=a: (T.sum_(a, 1) ** 2).sum())
    cases["mean"] = ([a], lambda a=a: (T.mean(a, 0, keepdims=True) ** 2).sum())
    cases["max"] = ([a], lambda a=a: (T.max_(a, 1) ** 2).sum())
    cases["softmax"] = ([a], lambda a=a: (T.softmax(a, 1) * w(3, 4)).sum())
    cases["log_softmax"] = ([a], lambda a=a: (T.log_softmax(a, 0) * w(3, 4)).sum())
    cases["reshape"] = ([a], lambda a=a: (T.reshape(a, (2, 6)) * w(2, 6)).sum())
    a = r(2, 3, 4)
    cases["transpose"] = ([a], lambda a=a: (T.transpose(a, (2, 0, 1)) * w(4, 2, 3)).sum())
    a, b = r(2, 3), r(2, 2)
    cases["concat"] = ([a, b], lambda a=a, b=b: (T.concat([a, b], 1) ** 2).sum())
    a = r(4, 3)
    rows, cols = np.array([0, 2, 2]), np.array([1, 0, 0])
    cases["slice"] = ([a], lambda a=a: (a[rows, cols] ** 2).sum())
    a = r(3, 1)
    cases["broadcast_to"] = ([a], lambda a=a: (T.broadcast_to(a, (2, 3, 4)) * w(2, 3, 4)).sum())
    a = r(2, 2, 3)
    cases["upsample2x"] = ([a], lambda a=a: (T.upsample2x(a) ** 2).sum())
    x, k, bias = r(2, 2, 5, 5), r(2, 2, 3, 3), r(2)
    cases["conv2d"] = ([x, k, bias], lambda x=x, k=k, bias=bias: (T.conv2d(x, k, bias, 2, 1) ** 2).sum())
    return cases


def _box_pair(rng, n):
    return np.c_[rng.uniform(0.3, 0.7, (n, 2)), rng.uniform(0.1, 0.4, (n, 2))]


def _loss_cases(rng) -> dict[str, tuple[list[Tensor], Callable[[], Tensor]]]:
    cases = {}
    p, g = _leaf(_box_pair(rng, 4)), _box_pair(rng, 4)
    cases["giou_loss"] = ([p], lambda: (1.0 - geometry.giou_t(geometry.to_xyxy_t(p), geometry.to_xyxy(g))).sum())
    x, t = _leaf(rng.normal(size=(4, 4))), rng.integers(0, 2, (4, 4)).astype(float)
    cases["focal_loss"] = ([x], lambda: focal_loss(x, t))
    y, u = _leaf(rng.normal(size=(5, 5))), rng.integers(0, 2, (5, 5)).astype(float)
    cases["dice_loss"] = ([y], lambda: dice_loss(y, u))
    return cases


def micro_model_case(seed: int = 0):
    """Micro model with a mask head, its inputs and a closure for the full matched loss."""
    rng = np.random.default_rng(seed)
    cfg = micro_config(mask_head_enabled=True)
    model = SketchDETR(cfg, rng)
    for _, p in model.named_parameters():
        # zero-initialized biases put ReLU inputs exactly on the kink over blank regions
        p.data = p.data + rng.normal(0.0, 0.05, p.shape)
    image = rng.uniform(0, 1, (3, cfg.image_size, cfg.image_size))
    sketch = (rng.uniform(0, 1, (1, cfg.sketch_size, cfg.sketch_size)) > 0.7).astype(float)
    out = detr_forward(model, image, sketch)
    m = out.mask_logits.shape[-1]
    tgt = Targets(_box_pair(rng, 2), np.zeros(2, int), (rng.random((2, m, m)) > 0.5).astype(float))
    assignment = match(out, tgt)

    def loss():
        return hungarian_loss(detr_forward(model, image, sketch), tgt, LossWeights(), assignment, masks=True).total

    return model, loss


def gradient_suite(seed: int = 0, include_model: bool = True) -> list[CaseResult]:
    rng = np.random.default_rng(seed)
    results = []
    for group, cases, tol in (("op", _op_cases(rng), OP_TOLERANCE), ("loss", _loss_cases(rng), OP_TOLERANCE)):
        for name, (params, f) in cases.items():

            def run(params=params, f=f, tol=tol):
                err = T.finite_difference_check(f, params, 1e-5)
                return err <= tol, f"max rel err {err:.2e} (tol {tol:g})"

            results.append(_case("gradients", f"{group}:{name}", run))
    if include_model:

        def model():
            net, f = micro_model_case(seed)
            params = [p for _, p in net.named_parameters()]
            err = T.finite_difference_check(f, params, 1e-5)
            return err <= MODEL_TOLERANCE, f"{sum(p.size for p in params)} params, max rel err {err:.2e}"

        results.append(_case("gradients", "micro_model:hungarian_loss+masks", model))
    return results


# --- average precision -------------------------------------------------------


def _random_ap_instance(rng):
    n_gt = int(rng.integers(1, 4))
    n_det = int(rng.integers(0, 6))
    centers = rng.uniform(0.3, 0.7, (n_gt, 2))
    gts = geometry.to_xyxy(np.c_[centers, rng.uniform(0.1, 0.3, (n_gt, 2))])
    dets = []
    for _ in range(n_det):
        base = gts[int(rng.integers(n_gt))]
        box = np.clip(base + rng.normal(0, 0.05, 4), 0, 1)
        box[2:] = np.maximum(box[2:], box[:2] + 0.01)
        # coarse scores create ties; ranking must be stable
        dets.append(Detection(box, float(rng.integers(1, 4)) / 4, 0))
    return dets, GroundTruth(gts)


def ap_suite(seed: int = 0, n_instances: int = 100) -> list[CaseResult]:
    def hand():
        ap = average_precision([True, False, True], 2)
        expected = (51 * 1.0 + 50 * (2 / 3)) / 101
        return abs(ap - expected) <= 1e-12 and abs(ap - 0.834983) <= 1e-6, f"AP {ap!r}"

    def no_gt():
        return average_precision([False], 0) == 0.0 and average_precision([], 0) is None, "no-GT conventions"

    def oracle():
        rng = np.random.default_rng(seed)
        bad = []
        for k in range(n_instances):
            dets, gts = _random_ap_instance(rng)
            ranked = [dets[i] for i in rank_order([d.score for d in dets])] if dets else []
            for t in (0.5, 0.75):
                main = average_precision(match_dets(ranked, gts, t), len(gts.boxes))
                ref = brute_force_ap(dets, gts, t)
                if main != ref:
                    bad.append(f"instance {k} @ {t}: {main} != {ref}")
        return not bad, "; ".join(bad[:3]) or f"{n_instances} instances exact"

    return [_case("ap", "hand_tp_fp_tp", hand), _case("ap", "no_ground_truth", no_gt), _case("ap", "brute_force_agreement", oracle)]


# --- geometry ----------------------------------------------------------------

GIOU_CASES = (
    ("iou_partial", "iou", [0, 0, 2, 2], [1, 1, 3, 3], 1 / 7),
    ("giou_touching", "giou", [0, 0, 1, 1], [1, 0, 2, 1], 0.0),
    ("giou_disjoint", "giou", [0, 0, 1, 1], [2, 2, 3, 3], -7 / 9),
    ("giou_containment", "giou", [0.25, 0.25, 0.75, 0.75], [0, 0, 1, 1], 0.25),
    ("giou_identity", "giou", [0.1, 0.2, 0.6, 0.9], [0.1, 0.2, 0.6, 0.9], 1.0),
)


def geometry_suite(giou_fn=None, iou_fn=None) -> list[CaseResult]:
    """``giou_fn``/``iou_fn`` replace the library functions (used to check the suite catches faults)."""
    fns = {"giou": giou_fn or geometry.giou, "iou": iou_fn or geometry.iou}
    results = []
    for name, kind, a, b, expected in GIOU_CASES:

        def run(kind=kind, a=a, b=b, expected=expected):
            got = float(fns[kind](np.array(a, float), np.array(b, float)))
            return abs(got - expected) <= VALUE_TOLERANCE, f"{kind} = {got!r}, expected {expected!r}"

        results.append(_case("geometry", name, run))

    def mask_cases():
        a, b = np.zeros((4, 4), bool), np.zeros((4, 4), bool)
        a[0:2, 0:2] = True
        b[0:2, 0:4] = True
        vals = (geometry.mask_iou(a, a), geometry.mask_iou(a, b), geometry.mask_iou(a, ~b), geometry.mask_iou(np.zeros((3, 3)), np.zeros((3, 3))))
        return vals == (1.0, 0.5, 0.0, 1.0), f"mask IoUs {vals}"

    results.append(_case("geometry", "mask_iou_cases", mask_cases))
    return results


SUITES = ("assignment", "gradients", "ap", "geometry")


def run_suites(seed: int = 0, suites=SUITES, giou_fn=None) -> list[CaseResult]:
    out = []
    for s in suites:
        if s == "assignment":
            out += assignment_suite(seed)
        elif s == "gradients":
            out += gradient_suite(seed)
        elif s == "ap":
            out += ap_suite(seed)
        elif s == "geometry":
            out += geometry_suite(giou_fn)
        else:
            raise ValueError(f"unknown suite {s!r}")
    return out


def failures(results) -> list[str]:
    return [f"{r.suite}/{r.name}: {r.detail}" for r in results if not r.passed]


__all__ = [
    "CaseResult",
    "run_suites",
    "assignment_suite",
    "gradient_suite",
    "ap_suite",
    "geometry_suite",
    "micro_model_case",
    "failures",
    "GIOU_CASES",
    "SUITES",
]
