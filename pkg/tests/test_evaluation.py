import numpy as np
import pytest

from instancematch.errors import DimMismatch, EmptyUnion, InvalidBox
from instancematch.evaluation import (
    GroundTruth,
    GroundTruthSet,
    compute_ap,
    iou_box,
    iou_mask,
)
from helpers import proposal, random_scene
from oracles import ap_oracle, iou_box_oracle, iou_mask_oracle


class TestIouBox:
    def test_identical(self):
        assert iou_box((0, 0, 2, 3), (0, 0, 2, 3)) == 1.0

    def test_disjoint(self):
        assert iou_box((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0

    def test_half_overlapping_unit_squares(self):
        assert iou_box((0, 0, 1, 1), (0.5, 0, 1.5, 1)) == pytest.approx(1 / 3, abs=1e-9)

    def test_symmetric_and_self(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = sorted(rng.uniform(0, 10, size=2)) + sorted(rng.uniform(0, 10, size=2))
            a = (a[0], a[2], a[1] + 1e-3, a[3] + 1e-3)
            b_raw = rng.uniform(0, 10, size=4)
            b = (
                min(b_raw[0], b_raw[1]),
                min(b_raw[2], b_raw[3]),
                max(b_raw[0], b_raw[1]) + 1e-3,
                max(b_raw[2], b_raw[3]) + 1e-3,
            )
            assert iou_box(a, a) == 1.0
            assert iou_box(a, b) == iou_box(b, a)
            assert iou_box(a, b) == pytest.approx(iou_box_oracle(a, b), abs=1e-12)

    def test_invalid_box(self):
        with pytest.raises(InvalidBox):
            iou_box((1, 0, 0, 1), (0, 0, 1, 1))


class TestIouMask:
    def test_identical_nonempty(self):
        m = np.zeros((4, 4), dtype=bool)
        m[1:3, 1:3] = True
        assert iou_mask(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, 0] = True
        b[3, 3] = True
        assert iou_mask(a, b) == 0.0

    def test_matches_popcount_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.random((10, 10)) < 0.5
        b = rng.random((10, 10)) < 0.5
        assert iou_mask(a, b) == pytest.approx(iou_mask_oracle(a, b), abs=1e-12)

    def test_both_empty_raises(self):
        with pytest.raises(EmptyUnion):
            iou_mask(np.zeros((3, 3), dtype=bool), np.zeros((3, 3), dtype=bool))

    def test_extent_mismatch(self):
        with pytest.raises(DimMismatch):
            iou_mask(np.zeros((3, 3), dtype=bool), np.zeros((4, 4), dtype=bool))


class TestComputeAp:
    def test_perfect_predictions(self):
        boxes = [(0, 0, 2, 2), (3, 3, 5, 5)]
        gt = GroundTruthSet({"img": [GroundTruth(i, boxes[i]) for i in range(2)]})
        preds = {"img": [proposal(i, 1.0, boxes[i]) for i in range(2)]}
        result = compute_ap(preds, gt, "box")
        assert result.ap == 1.0 and result.ap50 == 1.0 and result.ap75 == 1.0

    def test_no_predictions(self):
        gt = GroundTruthSet({"img": [GroundTruth(0, (0, 0, 1, 1))]})
        result = compute_ap({}, gt, "box")
        assert result.ap == 0.0 and result.ap50 == 0.0

    def test_two_predictions_hand_trace(self):
        # One gt; a perfect hit at 0.9 and a miss at 0.8. The PR points are
        # (1, 1) then (0.5, 1), so interpolated precision is 1 everywhere.
        gt = GroundTruthSet({"img": [GroundTruth(0, (0, 0, 1, 1))]})
        preds = {
            "img": [
                proposal(0, 0.9, (0, 0, 1, 1)),
                proposal(0, 0.8, (5, 5, 6, 6)),
            ]
        }
        result = compute_ap(preds, gt, "box")
        assert result.ap50 == 1.0

    def test_unlabeled_predictions_are_ignored(self):
        gt = GroundTruthSet({"img": [GroundTruth(0, (0, 0, 1, 1))]})
        preds = {"img": [proposal(None, 0.9, (0, 0, 1, 1))]}
        assert compute_ap(preds, gt, "box").ap == 0.0

    def test_score_scale_invariance(self):
        rng = np.random.default_rng(2)
        gt, preds = random_scene(rng, images=3)
        base = compute_ap(preds, GroundTruthSet(gt), "box")
        scaled = {
            img: [proposal(p.instance_id, p.score * 0.37, p.box) for p in ps]
            for img, ps in preds.items()
        }
        rescored = compute_ap(scaled, GroundTruthSet(gt), "box")
        assert rescored.ap == pytest.approx(base.ap, abs=1e-12)

    def test_matches_brute_force_oracle_box_mode(self):
        rng = np.random.default_rng(3)
        for _ in range(60):
            gt, preds = random_scene(rng)
            result = compute_ap(preds, GroundTruthSet(gt), "box")
            oracle_gt = {
                img: [(g.instance_id, g.box, None) for g in objs]
                for img, objs in gt.items()
            }
            oracle_preds = {
                img: [(p.instance_id, p.score, p.box, None) for p in ps]
                for img, ps in preds.items()
            }
            ap, ap50, ap75 = ap_oracle(oracle_preds, oracle_gt, "box")
            assert result.ap == pytest.approx(ap, abs=1e-9)
            assert result.ap50 == pytest.approx(ap50, abs=1e-9)
            assert result.ap75 == pytest.approx(ap75, abs=1e-9)

    def test_matches_brute_force_oracle_mask_mode(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            gt, preds = random_scene(rng, with_masks=True)
            result = compute_ap(preds, GroundTruthSet(gt), "mask")
            oracle_gt = {
                img: [(g.instance_id, g.box, g.mask.tolist()) for g in objs]
                for img, objs in gt.items()
            }
            oracle_preds = {
                img: [
                    (p.instance_id, p.score, p.box, p.mask.tolist()) for p in ps
                ]
                for img, ps in preds.items()
            }
            ap, ap50, ap75 = ap_oracle(oracle_preds, oracle_gt, "mask")
            assert result.ap == pytest.approx(ap, abs=1e-9)
            assert result.ap50 == pytest.approx(ap50, abs=1e-9)

    def test_ap_at_most_ap50(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            gt, preds = random_scene(rng)
            result = compute_ap(preds, GroundTruthSet(gt), "box")
            assert result.ap <= result.ap50 + 1e-12
            assert 0.0 <= result.ap <= 1.0
