import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgol import geometry as G
from sgol import tensor as T
from sgol.tensor import Tensor

unit = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def xyxy(draw, min_size=1e-3):
    x0, y0 = draw(unit), draw(unit)
    w, h = draw(st.floats(min_size, 1.0)), draw(st.floats(min_size, 1.0))
    return np.array([x0, y0, x0 + w, y0 + h])


def test_center_to_corner():
    np.testing.assert_array_equal(G.to_xyxy([0.5, 0.5, 0.5, 0.5]), [0.25, 0.25, 0.75, 0.75])


@given(unit, unit, unit, unit)
def test_roundtrip(cx, cy, w, h):
    b = np.array([cx, cy, w, h])
    assert np.max(np.abs(G.to_cxcywh(G.to_xyxy(b)) - b)) <= 1e-15


class TestIoU:
    def test_identity(self):
        assert G.iou([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0

    def test_partial(self):
        assert abs(G.iou([0, 0, 2, 2], [1, 1, 3, 3]) - 1 / 7) <= 1e-12

    def test_disjoint(self):
        assert G.iou([0, 0, 1, 1], [2, 2, 3, 3]) == 0.0

    def test_zero_area_union(self):
        assert G.iou([0.3, 0.3, 0.3, 0.3], [0.3, 0.3, 0.3, 0.3]) == 0.0


class TestGIoU:
    def test_identity(self):
        assert G.giou([0.1, 0.2, 0.6, 0.9], [0.1, 0.2, 0.6, 0.9]) == 1.0

    def test_touching(self):
        assert abs(G.giou([0, 0, 1, 1], [1, 0, 2, 1])) <= 1e-12

    def test_disjoint(self):
        assert abs(G.giou([0, 0, 1, 1], [2, 2, 3, 3]) - (-7 / 9)) <= 1e-12

    def test_containment_equals_iou(self):
        inner, outer = [0.25, 0.25, 0.75, 0.75], [0, 0, 1, 1]
        assert abs(G.giou(inner, outer) - 0.25) <= 1e-12
        assert abs(G.iou(inner, outer) - 0.25) <= 1e-12

    @given(xyxy(), xyxy())
    def test_giou_bounded_by_iou(self, a, b):
        g, i = G.giou(a, b), G.iou(a, b)
        assert -1 < g <= i + 1e-12
        assert 0 <= i <= 1

    @given(xyxy(), xyxy())
    def test_symmetric(self, a, b):
        assert G.giou(a, b) == pytest.approx(G.giou(b, a), abs=1e-14)

    def test_pairwise_matches_scalar(self):
        rng = np.random.default_rng(3)
        a = G.to_xyxy(rng.uniform(0.2, 0.8, (4, 4)) * [1, 1, 0.5, 0.5])
        b = G.to_xyxy(rng.uniform(0.2, 0.8, (3, 4)) * [1, 1, 0.5, 0.5])
        m = G.pairwise_giou(a, b)
        for i in range(4):
            for j in range(3):
                assert m[i, j] == G.giou(a[i], b[j])

    def test_tensor_matches_numpy(self):
        rng = np.random.default_rng(4)
        a = G.to_xyxy(np.c_[rng.uniform(0.3, 0.7, (6, 2)), rng.uniform(0.1, 0.4, (6, 2))])
        b = G.to_xyxy(np.c_[rng.uniform(0.3, 0.7, (6, 2)), rng.uniform(0.1, 0.4, (6, 2))])
        np.testing.assert_allclose(G.giou_t(Tensor(a), b).data, G.giou(a, b), rtol=1e-14, atol=1e-15)

    def test_tensor_gradcheck(self):
        rng = np.random.default_rng(5)
        pred = Tensor(np.c_[rng.uniform(0.3, 0.7, (4, 2)), rng.uniform(0.1, 0.4, (4, 2))], requires_grad=True)
        gt = np.c_[rng.uniform(0.3, 0.7, (4, 2)), rng.uniform(0.1, 0.4, (4, 2))]
        f = lambda: G.giou_t(G.to_xyxy_t(pred), G.to_xyxy(gt)).sum()
        assert T.finite_difference_check(f, [pred], 1e-6) <= 1e-6

    def test_degenerate_tensor_zero_gradient(self):
        a = Tensor(np.array([[0.5, 0.5, 0.5, 0.5]]), requires_grad=True)
        g = G.giou_t(a, np.array([[0.5, 0.5, 0.5, 0.5]]))
        T.backward(g.sum())
        assert g.data.tolist() == [0.0]
        assert np.all(a.grad == 0)


class TestL1:
    def test_identical(self):
        assert G.l1_box([0.5, 0.5, 0.2, 0.2], [0.5, 0.5, 0.2, 0.2]) == 0.0

    def test_hand(self):
        assert G.l1_box([0.5, 0.5, 1, 1], [0.5, 0.5, 0.5, 0.5]) == 1.0

    @given(st.lists(unit, min_size=4, max_size=4), st.lists(unit, min_size=4, max_size=4))
    def test_symmetric(self, a, b):
        assert G.l1_box(a, b) == G.l1_box(b, a)


class TestMaskIoU:
    def test_identical(self):
        m = np.zeros((4, 4), bool)
        m[1:3, 1:3] = True
        assert G.mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), bool)
        b = np.zeros((4, 4), bool)
        a[0, :2] = True
        b[3, 2:] = True
        assert G.mask_iou(a, b) == 0.0

    def test_half(self):
        a = np.zeros((4, 4), bool)
        b = np.zeros((4, 4), bool)
        a[0:2, 0:2] = True
        b[0:2, 0:4] = True
        assert G.mask_iou(a, b) == 0.5

    def test_both_empty(self):
        assert G.mask_iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            G.mask_iou(np.zeros((3, 3)), np.zeros((4, 4)))
