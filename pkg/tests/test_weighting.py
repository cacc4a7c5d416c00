import numpy as np
import pytest

from sapd.geometry import AnchorPoint, GroundTruthBox, PyramidSpec, contains, encode_distances, valid_box
from sapd.weighting import SoftWeightConfig, anchor_weight, centerness

D = (0.875, 0.875, 1.125, 1.125)


def test_centerness_symmetric_box_is_one():
    for a in (0.1, 1.0, 7.5):
        for eta in (0.0, 0.5, 1.0, 3.0):
            assert centerness([a] * 4, eta) == 1.0


def test_centerness_golden():
    assert centerness(D, 1.0) == pytest.approx((0.875 / 1.125) ** 2, abs=1e-12)
    assert centerness(D, 1.0) == pytest.approx(0.604938, abs=1e-6)
    assert centerness(D, 0.5) == pytest.approx(0.777778, abs=1e-6)


def test_centerness_eta_zero():
    assert centerness([0.1, 3.0, 2.0, 0.4], 0.0) == 1.0


def test_centerness_monotone_in_eta():
    rng = np.random.default_rng(0)
    d = rng.uniform(0.1, 2.0, (100, 4))
    prev = centerness(d, 0.25)
    for eta in (0.5, 1.0, 2.0, 4.0):
        cur = centerness(d, eta)
        assert np.all(cur < prev)
        prev = cur


def test_centerness_reflection_symmetry():
    rng = np.random.default_rng(1)
    d = rng.uniform(0.1, 2.0, (100, 4))
    np.testing.assert_array_equal(centerness(d), centerness(d[:, [2, 1, 0, 3]]))
    np.testing.assert_array_equal(centerness(d), centerness(d[:, [0, 3, 2, 1]]))


def test_centerness_range():
    rng = np.random.default_rng(2)
    c = centerness(rng.uniform(1e-3, 5, (1000, 4)), 1.0)
    assert np.all((c > 0) & (c <= 1))


class TestAnchorWeight:
    box = GroundTruthBox(1, 64, 64, 64, 64)
    cfg = SoftWeightConfig(epsilon=0.2)

    def test_negative(self):
        assert anchor_weight(AnchorPoint(3, 7, 7), None, None, self.cfg) == 1.0

    def test_outside_valid_box_is_negative(self):
        assert anchor_weight(AnchorPoint(3, 0, 0), self.box, 0.5, self.cfg) == 1.0

    def test_product_with_level_weight(self):
        # anchor at (60, 60) sits inside the 12.8 px valid box around (64, 64)
        w = anchor_weight(AnchorPoint(3, 7, 7), self.box, 0.5, self.cfg)
        assert w == pytest.approx(0.5 * 0.604938, abs=1e-6)
        assert w == pytest.approx(0.30247, abs=1e-5)

    def test_phase_one_reduces_to_centerness(self):
        assert anchor_weight(AnchorPoint(3, 7, 7), self.box, None, self.cfg) == pytest.approx(0.604938, abs=1e-6)

    def test_mode_off(self):
        cfg = SoftWeightConfig(mode="off")
        assert anchor_weight(AnchorPoint(3, 7, 7), self.box, None, cfg) == 1.0

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            SoftWeightConfig(mode="cls")


def test_weight_peaks_nearest_center_and_argmax_invariant():
    p = PyramidSpec(2, 5, 64, 64)
    rng = np.random.default_rng(4)
    for _ in range(100):
        b = GroundTruthBox(1, *rng.uniform(20, 44, 2), *rng.uniform(20, 40, 2))
        l = 2
        xs, ys = p.anchor_centers(l)
        X, Y = np.meshgrid(xs, ys)
        inside = contains(valid_box(b, 0.5), X, Y)
        if inside.sum() < 2:
            continue
        d = encode_distances(X[inside], Y[inside], 2**l, b, 4.0)
        w = centerness(d, 1.0)
        dist = np.hypot(X[inside] - b.cx, Y[inside] - b.cy)
        # the anchor nearest the center carries the maximum weight
        assert w[np.argmin(dist)] == pytest.approx(w.max())
        assert np.argmax(w * 0.37) == np.argmax(w)
