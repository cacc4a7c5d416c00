import numpy as np
import pytest

from sapd.evaluation import average_precision, evaluate
from sapd.geometry import GroundTruthBox
from sapd.postprocess import Detection


def det(cls, score, box):
    return Detection(cls, score, np.asarray(box, float), 2)


GT = GroundTruthBox(1, 20, 20, 20, 20)  # corners (10, 10, 30, 30)


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision(np.array([True, True]), np.array([0.9, 0.8]), 2) == 1.0

    def test_hand_walked(self):
        # ranked TP, FP, TP against 2 ground truths:
        # recall 0.5 at precision 1, recall 1 at precision 2/3
        ap = average_precision(np.array([True, False, True]), np.array([0.9, 0.8, 0.7]), 2)
        expected = (51 * 1.0 + 50 * (2 / 3)) / 101
        assert ap == pytest.approx(expected)

    def test_half_recall(self):
        ap = average_precision(np.array([True]), np.array([0.9]), 2)
        assert ap == pytest.approx(51 / 101)

    def test_no_detections(self):
        assert average_precision(np.zeros(0, bool), np.zeros(0), 3) == 0.0

    def test_no_ground_truth(self):
        assert np.isnan(average_precision(np.array([False]), np.array([0.5]), 0))


class TestEvaluate:
    def test_perfect_detection(self):
        r = evaluate([[det(1, 0.9, GT.corners())]], [[GT]], 1)
        assert r == {"AP": 1.0, "AP50": 1.0, "AP75": 1.0}

    def test_loose_box(self):
        box = [10, 10, 30, 36]  # IoU = 400 / 520
        r = evaluate([[det(1, 0.9, box)]], [[GT]], 1)
        assert r["AP50"] == 1.0 and r["AP75"] == 1.0
        box = [10, 10, 30, 40]  # IoU = 400 / 600
        r = evaluate([[det(1, 0.9, box)]], [[GT]], 1)
        assert r["AP50"] == 1.0 and r["AP75"] == 0.0
        assert r["AP"] == pytest.approx(4 / 10)

    def test_wrong_class_misses(self):
        r = evaluate([[det(2, 0.9, GT.corners())]], [[GT]], 2)
        assert r["AP50"] == 0.0

    def test_duplicate_is_false_positive(self):
        dets = [[det(1, 0.9, GT.corners()), det(1, 0.8, GT.corners())]]
        assert evaluate(dets, [[GT]], 1)["AP50"] == 1.0
        # a duplicate ranked above the only true hit in a second image costs precision
        gt2 = GroundTruthBox(1, 40, 40, 10, 10)
        dets = [[det(1, 0.9, GT.corners()), det(1, 0.8, GT.corners())], [det(1, 0.7, gt2.corners())]]
        r = evaluate(dets, [[GT], [gt2]], 1)
        assert r["AP50"] == pytest.approx((51 + 50 * 2 / 3) / 101)

    def test_classes_without_ground_truth_excluded(self):
        dets = [[det(1, 0.9, GT.corners()), det(3, 0.9, [0, 0, 5, 5])]]
        assert evaluate(dets, [[GT]], 3)["AP"] == 1.0

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            evaluate([[]], [[], []], 1)
