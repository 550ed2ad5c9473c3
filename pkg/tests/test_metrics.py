import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coips.errors import DimensionError, RangeError, UndefinedMetricError
from coips.metrics import (
    classification_report,
    confusion_matrix,
    hard_dice,
    jaccard,
    jaccard_from_dice,
    macro_roc_auc,
    roc_auc,
    roc_curve,
    seg_precision,
    seg_recall,
)


def brute_auc(scores, pos):
    p = scores[pos]
    n = scores[~pos]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in product(p, n))
    return wins / (len(p) * len(n))


class TestConfusion:
    def test_identity(self):
        cm = confusion_matrix([0, 1, 2, 2], [0, 1, 2, 2], 3)
        assert (cm.counts == np.diag([1, 1, 2])).all() and cm.accuracy == 1.0
        rep = classification_report(cm)
        assert rep.precision == rep.recall == rep.f1 == [1.0, 1.0, 1.0]

    def test_fixture(self):
        rep = classification_report(confusion_matrix([0, 0, 1, 2], [0, 1, 1, 2], 3))
        assert rep.accuracy == 0.75
        assert round(rep.macro["precision"], 5) == 0.83333
        assert round(rep.f1[0], 5) == 0.66667
        assert rep.weighted["precision"] == 0.875
        assert rep.support == [2, 1, 1]
        assert rep.balanced_accuracy == (0.5 + 1 + 1) / 3

    def test_empty(self):
        with pytest.raises(UndefinedMetricError):
            confusion_matrix([], [], 3)

    def test_out_of_range(self):
        with pytest.raises(RangeError):
            confusion_matrix([0, 3], [0, 1], 3)

    def test_unpredicted_class_warns(self):
        rep = classification_report(confusion_matrix([0, 1, 2], [0, 0, 0], 3))
        assert rep.precision[1] == 0.0 and rep.warnings

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        t = rng.integers(0, 3, 30)
        p = rng.integers(0, 3, 30)
        perm = rng.permutation(30)
        a = classification_report(confusion_matrix(t, p, 3)).to_dict()
        b = classification_report(confusion_matrix(t[perm], p[perm], 3)).to_dict()
        assert a == b
        for v in (a["accuracy"], *a["precision"], *a["recall"], *a["f1"]):
            assert 0 <= v <= 1


class TestAUC:
    def test_fixture(self):
        scores = np.array([0.9, 0.4, 0.5, 0.1])
        y = np.array([1, 1, 0, 0])
        assert roc_auc(scores, y, 1) == 0.75

    def test_separated_and_ties(self):
        y = np.array([0, 0, 1, 1, 1])
        assert roc_auc(np.array([0.1, 0.2, 0.5, 0.7, 0.9]), y, 1) == 1.0
        assert roc_auc(np.full(5, 0.3), y, 1) == 0.5

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc(np.array([0.2, 0.4]), np.array([1, 1]), 1)

    def test_macro(self):
        scores = np.eye(3)[[0, 1, 2, 1]]
        assert macro_roc_auc(scores, [0, 1, 2, 1]) == 1.0

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 60))
        scores = rng.integers(0, 8, n) / 8.0  # coarse grid forces ties
        y = rng.integers(0, 2, n)
        if y.all() or not y.any():
            y[0] = 1 - y[0]
        assert roc_auc(scores, y, 1) == brute_auc(scores, y == 1)

    def test_curve(self):
        pts = roc_curve(np.array([0.9, 0.4, 0.5, 0.1]), np.array([1, 1, 0, 0]), 1)
        assert pts[0] == (math.inf, 0.0, 0.0)
        assert pts[-1][1:] == (1.0, 1.0)
        assert [p[0] for p in pts[1:]] == [0.9, 0.5, 0.4, 0.1]
        fprs = [p[1] for p in pts]
        tprs = [p[2] for p in pts]
        assert fprs == sorted(fprs) and tprs == sorted(tprs)
        # trapezoid area under the curve equals the rank AUC
        area = sum((f2 - f1) * (t1 + t2) / 2 for (_, f1, t1), (_, f2, t2) in zip(pts, pts[1:]))
        assert math.isclose(area, 0.75)


class TestSegmentation:
    def fixture(self):
        sr = np.zeros((4, 4), bool)
        gt = np.zeros((4, 4), bool)
        sr[0, 0:4] = True
        gt[0, 2:4] = True
        gt[1, 0:2] = True
        return sr, gt

    def test_fixture(self):
        sr, gt = self.fixture()
        assert math.isclose(jaccard(sr, gt), 1 / 3)
        assert seg_precision(sr, gt) == seg_recall(sr, gt) == 0.5
        d = hard_dice(sr, gt)
        assert d == 0.5 and math.isclose(jaccard_from_dice(d), 1 / 3)

    def test_identical(self):
        sr, _ = self.fixture()
        assert jaccard(sr, sr) == seg_precision(sr, sr) == seg_recall(sr, sr) == 1.0

    def test_degenerate(self):
        z = np.zeros((3, 3))
        one = np.eye(3)
        with pytest.raises(UndefinedMetricError):
            jaccard(z, z)
        with pytest.raises(UndefinedMetricError):
            seg_precision(z, one)
        with pytest.raises(UndefinedMetricError):
            seg_recall(one, z)

    def test_shape(self):
        with pytest.raises(DimensionError):
            jaccard(np.zeros((3, 3)), np.zeros((3, 2)))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_ordering(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.random((7, 7)) < 0.5
        b = rng.random((7, 7)) < 0.5
        if not (a.any() or b.any()):
            return
        j, d = jaccard(a, b), hard_dice(a, b)
        assert 0 <= j <= d <= 1
