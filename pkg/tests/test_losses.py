import math

import numpy as np
import pytest

from evtrack.events import BBox
from evtrack.head import HeadOutputs
from evtrack.losses import (LossWeights, combine_losses, focal_loss,
                            focal_loss_with_grad, gaussian_heatmap, gaussian_radius,
                            giou, iou, total_loss)

from _utils import assert_grad_close, central_difference


class TestGIoU:
    def test_identity(self):
        b = BBox(10.3, 7.9, 4.2, 6.1)
        assert giou(b, b) == 1.0

    def test_disjoint_unit_boxes_exact_zero(self):
        # IoU 0, hull 2, union 2 -> giou = 0 - (2-2)/2 = 0
        assert giou(BBox(0.5, 0.5, 1, 1), BBox(1.5, 0.5, 1, 1)) == 0.0

    def test_asymptotic_lower_bound(self):
        a = BBox(0, 0, 1, 1)
        vals = [giou(a, BBox(d, 0, 1, 1)) for d in (10, 100, 10_000)]
        assert vals[0] > vals[1] > vals[2] > -1.0
        assert vals[2] < -0.999

    def test_never_exceeds_iou(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a = BBox(*rng.uniform(0, 30, 2), *rng.uniform(0.1, 12, 2))
            b = BBox(*rng.uniform(0, 30, 2), *rng.uniform(0.1, 12, 2))
            assert giou(a, b) <= iou(a, b) + 1e-12

    def test_translation_and_scale_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = BBox(*rng.uniform(0, 20, 2), *rng.uniform(0.5, 8, 2))
            b = BBox(*rng.uniform(0, 20, 2), *rng.uniform(0.5, 8, 2))
            base = giou(a, b)
            dx, dy = rng.uniform(-100, 100, 2)
            shifted = giou(BBox(a.cx + dx, a.cy + dy, a.w, a.h),
                           BBox(b.cx + dx, b.cy + dy, b.w, b.h))
            s = float(rng.uniform(0.05, 20))
            scaled = giou(BBox(a.cx * s, a.cy * s, a.w * s, a.h * s),
                          BBox(b.cx * s, b.cy * s, b.w * s, b.h * s))
            assert abs(shifted - base) < 1e-9
            assert abs(scaled - base) < 1e-9

    def test_equality_iff_hull_equals_union(self):
        # nested boxes: hull == outer box == union -> giou == iou
        outer = BBox(0, 0, 10, 10)
        inner = BBox(1, 1, 2, 2)
        assert giou(outer, inner) == pytest.approx(iou(outer, inner), abs=1e-12)


class TestFocal:
    def test_perfect_prediction_near_zero(self):
        target = gaussian_heatmap((8, 8), (4, 4), 0.0)
        score = target.copy()
        assert focal_loss(score, target) < 1e-12

    def test_uniform_half_matches_direct_summation(self):
        side = 16
        target = np.zeros((side, side))
        target[5, 7] = 1.0
        score = np.full((side, side), 0.5)
        # independent plain-loop evaluation
        expected = 0.0
        for i in range(side):
            for j in range(side):
                if target[i, j] == 1.0:
                    expected += -((1 - 0.5) ** 2) * math.log(0.5)
                else:
                    expected += -((1 - target[i, j]) ** 4) * 0.5 ** 2 * math.log(0.5)
        assert focal_loss(score, target) == pytest.approx(expected, rel=1e-12)

    def test_normalization_by_positive_count(self):
        target = np.zeros((4, 4))
        target[1, 1] = 1.0
        score = np.random.default_rng(2).uniform(0.2, 0.8, (4, 4))
        single = focal_loss(score, target)
        doubled = focal_loss(np.vstack([score, score]), np.vstack([target, target]))
        assert doubled == pytest.approx(single, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        target = gaussian_heatmap((6, 6), (2, 3), 1.0)
        score = rng.uniform(0.15, 0.85, (6, 6))
        _, grad = focal_loss_with_grad(score, target)
        for idx in ((0, 0), (2, 3), (5, 5), (3, 1)):
            fd = central_difference(lambda: focal_loss(score, target), score, idx)
            assert_grad_close(grad[idx], fd)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            focal_loss(np.zeros((4, 4)), np.zeros((5, 5)))


class TestGaussianTarget:
    def test_peak_is_exactly_one(self):
        hm = gaussian_heatmap((16, 16), (7, 9), 2.7)
        assert hm[7, 9] == 1.0
        assert hm.max() == 1.0
        assert np.all(hm >= 0)

    def test_radius_positive_for_typical_boxes(self):
        assert gaussian_radius(4.0, 4.0) > 0
        assert gaussian_radius(1.0, 1.0) >= 0


class TestTotalLoss:
    def test_weighted_combination(self):
        assert combine_losses(0.1, 0.2, 0.3, LossWeights(5, 1, 2)) == pytest.approx(
            1.3, abs=1e-15)

    def test_default_weights_are_paper_values(self):
        w = LossWeights()
        assert (w.l1, w.focal, w.giou) == (5.0, 1.0, 2.0)

    def exact_outputs(self, side=16, cell=16):
        gt = BBox((7 + 0.5) * cell, (4 + 0.5) * cell, 48.0, 32.0)
        score = np.zeros((side, side))
        score[4, 7] = 1.0
        offset = np.zeros((2, side, side))
        offset[:, 4, 7] = 0.5
        size = np.full((2, side, side), 0.5)
        size[0, 4, 7] = 48.0 / 256.0
        size[1, 4, 7] = 32.0 / 256.0
        return HeadOutputs(score=score, offset=offset, size=size), gt

    def test_zero_components_give_zero_total_and_gradients(self):
        out, gt = self.exact_outputs()
        # shrink the heatmap to one-hot by zeroing the box (radius 0 target)
        result = total_loss(out, BBox(gt.cx, gt.cy, 0.1, 0.1))
        assert result.l1 == pytest.approx(0.0, abs=0.25 / 256)  # sizes differ slightly
        result = total_loss(out, gt)
        assert result.l1 == 0.0
        assert result.giou_loss == pytest.approx(0.0, abs=1e-12)
        assert result.focal < 1e-9
        assert np.all(result.grad_offset == 0)
        assert np.all(result.grad_size == 0)

    def test_pred_box_decoded_at_gt_cell(self):
        out, gt = self.exact_outputs()
        result = total_loss(out, gt)
        assert result.pred_box.cx == gt.cx and result.pred_box.w == gt.w

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(4)
        side = 4
        cell = 256 // side
        for _ in range(5):
            score = rng.uniform(0.1, 0.9, (side, side))
            offset = rng.uniform(0.05, 0.95, (2, side, side))
            size = rng.uniform(0.1, 0.9, (2, side, side))
            gt = BBox(float(rng.uniform(40, 216)), float(rng.uniform(40, 216)),
                      float(rng.uniform(30, 90)), float(rng.uniform(30, 90)))
            out = HeadOutputs(score=score, offset=offset, size=size)
            res = total_loss(out, gt)

            def value():
                return total_loss(HeadOutputs(score, offset, size), gt).total

            for idx in ((0, 0), (1, 2), (3, 3)):
                fd = central_difference(value, score, idx)
                assert_grad_close(res.grad_score[idx], fd)
            j = int(np.clip(gt.cx // cell, 0, side - 1))
            i = int(np.clip(gt.cy // cell, 0, side - 1))
            for arr, grad in ((offset, res.grad_offset), (size, res.grad_size)):
                for ch in (0, 1):
                    fd = central_difference(value, arr, (ch, i, j))
                    assert_grad_close(grad[ch, i, j], fd)
                # cells away from the gt cell carry exactly zero gradient
                off_cell = ((i + 1) % side, (j + 2) % side)
                assert grad[0][off_cell] == 0.0
                fd = central_difference(value, arr, (0, *off_cell))
                assert fd == 0.0

    def test_total_is_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            out = HeadOutputs(score=rng.uniform(0.01, 0.99, (8, 8)),
                              offset=rng.uniform(0, 1, (2, 8, 8)),
                              size=rng.uniform(0.01, 1, (2, 8, 8)))
            gt = BBox(float(rng.uniform(30, 220)), float(rng.uniform(30, 220)),
                      float(rng.uniform(10, 100)), float(rng.uniform(10, 100)))
            assert total_loss(out, gt).total >= 0.0
