import math

import numpy as np
import pytest

from sgol import tensor as T
from sgol.losses import batch_loss, box_loss, classification_loss, dice_loss, focal_loss, hungarian_loss, match
from sgol.matching import Assignment, LossWeights
from sgol.structures import DetectionOutput, Targets
from sgol.tensor import Tensor

BIG = 60.0


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


class TestClassification:
    def test_assigned_certain(self):
        assert classification_loss(T.tensor([[BIG, -BIG]]), Assignment((0,), 0.0)).item() <= 1e-40

    def test_unassigned_uniform(self):
        loss = classification_loss(T.tensor([[0.0, 0.0]]), Assignment((), 0.0), eos_weight=0.1)
        assert loss.item() == pytest.approx(0.1 * math.log(2), abs=1e-15)

    def test_two_queries_perfect(self):
        loss = classification_loss(T.tensor([[BIG, -BIG], [-BIG, BIG]]), Assignment((0,), 0.0))
        assert loss.item() <= 1e-40

    def test_multiclass_labels(self):
        logits = T.tensor([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        # three-way uniform: object term log 3, no-object term 0.1 log 3
        loss = classification_loss(logits, Assignment((1,), 0.0), 0.1, labels=[1])
        assert loss.item() == pytest.approx((math.log(3) + 0.1 * math.log(3)) / 2, abs=1e-15)

    def test_gradcheck(self):
        x = leaf(np.random.default_rng(0).normal(size=(4, 2)))
        f = lambda: classification_loss(x, Assignment((2, 0), 0.0))
        assert T.finite_difference_check(f, [x]) <= 1e-6


class TestBox:
    def test_identical(self):
        assert box_loss(T.tensor([[0.5, 0.5, 0.3, 0.3]]), [[0.5, 0.5, 0.3, 0.3]]).item() == 0.0

    def test_hand(self):
        assert box_loss(T.tensor([0.5, 0.5, 1, 1]), [0.5, 0.5, 0.5, 0.5]).item() == pytest.approx(6.5, abs=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(1)
        p = leaf(np.c_[rng.uniform(0.3, 0.7, (3, 2)), rng.uniform(0.1, 0.4, (3, 2))])
        g = np.c_[rng.uniform(0.3, 0.7, (3, 2)), rng.uniform(0.1, 0.4, (3, 2))]
        assert T.finite_difference_check(lambda: box_loss(p, g), [p]) <= 1e-6


class TestFocal:
    def test_single_pixel(self):
        logit = math.log(0.9 / 0.1)
        expected = 0.25 * 0.01 * -math.log(0.9)
        assert focal_loss(T.tensor([logit]), [1.0]).item() == pytest.approx(expected, rel=1e-12)
        assert abs(expected - 2.634e-4) < 1e-7

    def test_reduces_to_half_bce(self):
        rng = np.random.default_rng(2)
        x, t = rng.normal(size=(3, 3)), rng.integers(0, 2, (3, 3)).astype(float)
        p = 1 / (1 + np.exp(-x))
        bce = -(t * np.log(p) + (1 - t) * np.log(1 - p)).mean()
        assert focal_loss(T.tensor(x), t, alpha=0.5, gamma=0.0).item() == pytest.approx(0.5 * bce, rel=1e-12)

    def test_confident_correct_vanishes(self):
        t = np.array([1.0, 0.0, 1.0])
        assert focal_loss(T.tensor(np.where(t > 0, BIG, -BIG)), t).item() <= 1e-40

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        x = leaf(rng.normal(size=(4, 4)))
        t = rng.integers(0, 2, (4, 4)).astype(float)
        assert T.finite_difference_check(lambda: focal_loss(x, t), [x]) <= 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            focal_loss(T.zeros((2, 2)), np.zeros((3, 3)))


class TestDice:
    def test_empty_target_and_prediction(self):
        assert dice_loss(T.tensor(np.full((4, 4), -BIG)), np.zeros((4, 4))).item() == pytest.approx(0.0, abs=1e-20)

    def test_perfect(self):
        m = np.zeros((4, 4))
        m[:2, :2] = 1
        # sigma is exactly 1.0 in float64 at this logit
        logits = np.where(m > 0, 40.0, -800.0)
        assert dice_loss(T.tensor(logits), m).item() == pytest.approx(0.0, abs=1e-15)

    def test_all_miss(self):
        m = np.zeros((4, 4))
        m[:2, :2] = 1
        assert dice_loss(T.tensor(np.full((4, 4), -800.0)), m).item() == pytest.approx(0.8, abs=1e-15)

    def test_gradcheck(self):
        rng = np.random.default_rng(4)
        x = leaf(rng.normal(size=(5, 5)))
        t = rng.integers(0, 2, (5, 5)).astype(float)
        assert T.finite_difference_check(lambda: dice_loss(x, t), [x]) <= 1e-6


def _binary_output(boxes, logits, masks=None):
    return DetectionOutput(boxes=leaf(boxes), obj_logits=leaf(logits), class_logits=None, mask_logits=masks)


class TestHungarianLoss:
    def test_perfect(self):
        gt = np.array([[0.3, 0.3, 0.2, 0.2], [0.7, 0.6, 0.3, 0.2]])
        out = _binary_output(
            [[0.7, 0.6, 0.3, 0.2], [0.5, 0.5, 0.1, 0.1], [0.3, 0.3, 0.2, 0.2]],
            [[BIG, -BIG], [-BIG, BIG], [BIG, -BIG]],
        )
        lb = hungarian_loss(out, Targets(gt, np.zeros(2, int)))
        assert lb.total.item() <= 1e-12

    def test_no_targets(self):
        out = _binary_output([[0.5, 0.5, 0.2, 0.2], [0.4, 0.4, 0.1, 0.1]], [[0.0, 0.0], [0.0, 0.0]])
        lb = hungarian_loss(out, Targets(np.zeros((0, 4)), np.zeros(0, int)))
        assert lb.total.item() == pytest.approx(0.1 * math.log(2), abs=1e-15)
        assert lb.box_giou == 0.0 and lb.box_l1 == 0.0

    def test_composed_hand_sum(self):
        out = _binary_output([[0.5, 0.5, 1.0, 1.0], [0.1, 0.1, 0.1, 0.1]], [[BIG, -BIG], [0.0, 0.0]])
        tgt = Targets(np.array([[0.5, 0.5, 0.5, 0.5]]), np.zeros(1, int))
        assert match(out, tgt).cols == (0,)
        lb = hungarian_loss(out, tgt)
        assert lb.total.item() == pytest.approx(0.1 * math.log(2) / 2 + 6.5, abs=1e-12)

    def test_gradcheck_with_masks(self):
        rng = np.random.default_rng(5)
        boxes = np.c_[rng.uniform(0.3, 0.7, (3, 2)), rng.uniform(0.1, 0.4, (3, 2))]
        out = _binary_output(boxes, rng.normal(size=(3, 2)), leaf(rng.normal(size=(3, 4, 4))))
        tgt = Targets(
            np.c_[rng.uniform(0.3, 0.7, (2, 2)), rng.uniform(0.1, 0.4, (2, 2))],
            np.zeros(2, int),
            rng.integers(0, 2, (2, 4, 4)).astype(float),
        )
        a = match(out, tgt)
        f = lambda: hungarian_loss(out, tgt, LossWeights(), a).total
        assert T.finite_difference_check(f, [out.boxes, out.obj_logits, out.mask_logits]) <= 1e-6

    def test_batch_is_mean_of_items(self):
        rng = np.random.default_rng(6)
        boxes = np.c_[rng.uniform(0.3, 0.7, (2, 3, 2)).reshape(-1, 2), rng.uniform(0.1, 0.4, (6, 2))].reshape(2, 3, 4)
        out = DetectionOutput(leaf(boxes), leaf(rng.normal(size=(2, 3, 2))), None, None)
        tgts = [
            Targets(np.array([[0.4, 0.4, 0.2, 0.2]]), np.zeros(1, int)),
            Targets(np.zeros((0, 4)), np.zeros(0, int)),
        ]
        total, parts = batch_loss(out, tgts)
        singles = [hungarian_loss(out.item(i), tgts[i]).total.item() for i in range(2)]
        assert total.item() == pytest.approx(np.mean(singles), rel=1e-14)
        assert parts["total"] == pytest.approx(total.item(), rel=1e-14)

    @pytest.mark.parametrize("multi", [False, True])
    def test_batched_gather_matches_per_image_loop(self, multi):
        rng = np.random.default_rng(11)
        b, n, k = 3, 4, 3
        boxes = np.concatenate([rng.uniform(0.3, 0.7, (b, n, 2)), rng.uniform(0.1, 0.4, (b, n, 2))], -1)
        logits = leaf(rng.normal(size=(b, n, k + 1 if multi else 2)))
        out = DetectionOutput(leaf(boxes), None if multi else logits, logits if multi else None, leaf(rng.normal(size=(b, n, 4, 4))))
        tgts = []
        for m in (2, 0, 3):
            tb = np.c_[rng.uniform(0.3, 0.7, (m, 2)), rng.uniform(0.1, 0.4, (m, 2))]
            tgts.append(Targets(tb, rng.integers(0, k, m), rng.integers(0, 2, (m, 4, 4)).astype(float)))
        total, parts = batch_loss(out, tgts)
        per = [hungarian_loss(out.item(i), tgts[i]) for i in range(b)]
        assert total.item() == pytest.approx(np.mean([p.total.item() for p in per]), rel=1e-12)
        for key in ("classification", "box_giou", "box_l1", "mask_focal", "mask_dice"):
            assert parts[key] == pytest.approx(np.mean([getattr(p, key) for p in per]), rel=1e-12, abs=1e-15)
        params = [out.boxes, logits, out.mask_logits]
        T.zero_grad(params)
        T.backward(total)
        fast = [p.grad.copy() for p in params]
        T.zero_grad(params)
        ref = None
        for i in range(b):
            sub = DetectionOutput(*(None if t is None else t[i] for t in (out.boxes, out.obj_logits, out.class_logits, out.mask_logits)))
            term = hungarian_loss(sub, tgts[i], LossWeights(), match(out.item(i), tgts[i])).total * (1.0 / b)
            ref = term if ref is None else ref + term
        T.backward(ref)
        for g, p in zip(fast, params):
            np.testing.assert_allclose(g, p.grad, rtol=1e-10, atol=1e-14)
