import numpy as np
import pytest

from sapd.geometry import GroundTruthBox, PyramidSpec, contains, encode_distances, valid_box
from sapd.targets import build_targets, hard_assignments
from sapd.weighting import SoftWeightConfig, centerness

PYR = PyramidSpec(2, 5, 64, 64)


def lattice_positives(box, level, eps=0.2):
    xs, ys = PYR.anchor_centers(level)
    X, Y = np.meshgrid(xs, ys)
    return contains(valid_box(box, eps), X, Y)


class TestBuildTargets:
    def test_single_instance_matches_lattice_scan(self):
        box = GroundTruthBox(2, 30, 26, 36, 30)
        t = build_targets([box], hard_assignments([0]), PYR)
        np.testing.assert_array_equal(t[0].positive, lattice_positives(box, 2))
        for other in t[1:]:
            assert not other.positive.any()
        assert set(np.unique(t[0].cls[t[0].positive])) == {2}
        assert np.all(t[0].cls[~t[0].positive] == 0)

    def test_weights_are_centerness(self):
        box = GroundTruthBox(1, 30, 26, 36, 30)
        t = build_targets([box], hard_assignments([0]), PYR)[0]
        xs, ys = PYR.anchor_centers(2)
        jj, ii = np.nonzero(t.positive)
        d = encode_distances(xs[ii], ys[jj], 4, box, 4.0)
        np.testing.assert_allclose(t.loc[jj, ii], d)
        np.testing.assert_allclose(t.weight[jj, ii], centerness(d))
        assert np.all(t.weight[~t.positive] == 1.0)

    def test_level_weight_multiplies(self):
        box = GroundTruthBox(1, 30, 26, 36, 30)
        a = build_targets([box], [[(0, 0.4), (1, 0.3)]], PYR)
        b = build_targets([box], hard_assignments([0]), PYR)
        pos = a[0].positive
        np.testing.assert_allclose(a[0].weight[pos], 0.4 * b[0].weight[pos])
        assert a[1].positive.any()

    def test_weighting_off(self):
        box = GroundTruthBox(1, 30, 26, 36, 30)
        t = build_targets([box], [[(0, 0.4)]], PYR, SoftWeightConfig(mode="off"))[0]
        np.testing.assert_allclose(t.weight[t.positive], 0.4)

    def test_unassigned_instance_is_ignored(self):
        box = GroundTruthBox(1, 30, 26, 36, 30)
        t = build_targets([box], hard_assignments([None]), PYR)
        assert not any(x.positive.any() for x in t)

    def test_overlap_goes_to_smaller_instance(self):
        big = GroundTruthBox(1, 32, 32, 56, 56)
        small = GroundTruthBox(3, 32, 32, 24, 24)
        for order in ([big, small], [small, big]):
            t = build_targets(order, hard_assignments([0, 0]), PYR)[0]
            shared = lattice_positives(big, 2) & lattice_positives(small, 2)
            assert shared.any()
            assert np.all(t.cls[shared] == 3)

    def test_area_tie_breaks_on_class_then_index(self):
        a = GroundTruthBox(3, 32, 32, 30, 30)
        b = GroundTruthBox(2, 32, 32, 30, 30)
        t = build_targets([a, b], hard_assignments([0, 0]), PYR)[0]
        assert np.all(t.cls[t.positive] == 2)
        c = GroundTruthBox(2, 32, 32, 30, 30)
        t = build_targets([b, c], hard_assignments([0, 0]), PYR)[0]
        assert np.all(t.owner[t.positive] == 0)

    @pytest.mark.parametrize("eps", [0.1, 0.2, 0.5, 1.0])
    def test_positive_count_matches_brute_force(self, eps):
        rng = np.random.default_rng(int(eps * 10))
        cfg = SoftWeightConfig(epsilon=eps)
        for _ in range(20):
            box = GroundTruthBox(1, *rng.uniform(16, 48, 2), *rng.uniform(12, 32, 2))
            lvl = int(rng.integers(0, 4))
            t = build_targets([box], hard_assignments([lvl]), PYR, cfg)
            assert t[lvl].positive.sum() == lattice_positives(box, PYR.levels[lvl], eps).sum()
