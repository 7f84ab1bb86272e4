import numpy as np
import pytest

from tdvit.evaluate import (
    ScoredSet,
    read_scores_csv,
    roc_auc,
    roc_curve,
    trapezoid_area,
    write_roc_csv,
    write_scores_csv,
)


def pairwise_auc(scores, labels):
    """O(n^2) oracle: concordant pairs plus half credit for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestRocAuc:
    def test_perfect_separation(self):
        s = ScoredSet([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        assert roc_auc(s) == 1.0

    def test_all_tied_scores(self):
        s = ScoredSet([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1])
        assert roc_auc(s) == 0.5

    def test_hand_case(self):
        # pairwise count: 3 of 4 (pos, neg) pairs concordant
        s = ScoredSet([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert roc_auc(s) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="undefined"):
            roc_auc(ScoredSet([0.1, 0.9], [1, 1]))

    def test_matches_pairwise_oracle_with_ties(self):
        rng = np.random.default_rng(0)
        for trial in range(1000):
            n = int(rng.integers(4, 51))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # coarse grid scores force plenty of exact ties
            scores = rng.integers(0, 6, size=n) / 5.0
            s = ScoredSet(scores, labels)
            assert roc_auc(s) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12), trial

    def test_complement_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(4, 40))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = rng.random(n).round(1)
            a = roc_auc(ScoredSet(scores, labels))
            b = roc_auc(ScoredSet(scores, 1 - labels))
            assert a + b == pytest.approx(1.0, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.random(30)
        labels = rng.integers(0, 2, size=30)
        labels[:2] = [0, 1]
        base = roc_auc(ScoredSet(scores, labels))
        for tf in (lambda x: 3 * x + 1, np.exp, lambda x: x**3):
            assert roc_auc(ScoredSet(tf(scores), labels)) == pytest.approx(base, abs=1e-12)


class TestRocCurve:
    def test_perfect_curve_hits_corner(self):
        s = ScoredSet([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        pts = roc_curve(s)
        assert (0.0, 1.0) in pts
        assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)

    def test_monotone_nondecreasing(self):
        rng = np.random.default_rng(3)
        scores = rng.random(40).round(1)
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        pts = np.array(roc_curve(ScoredSet(scores, labels)))
        assert (np.diff(pts[:, 0]) >= 0).all()
        assert (np.diff(pts[:, 1]) >= 0).all()

    def test_trapezoid_area_equals_auc(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(4, 60))
            scores = rng.integers(0, 8, size=n) / 7.0
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            s = ScoredSet(scores, labels)
            assert trapezoid_area(roc_curve(s)) == pytest.approx(roc_auc(s), abs=1e-12)

    def test_one_per_class_three_points(self):
        pts = roc_curve(ScoredSet([0.3, 0.7], [0, 1]))
        assert len(pts) == 3


class TestCsv:
    def test_scores_roundtrip(self, tmp_path):
        p = tmp_path / "scores.csv"
        scores = np.array([0.125, 0.5, 0.875])
        labels = np.array([0, 1, 1])
        write_scores_csv(str(p), scores, labels)
        s = read_scores_csv(str(p))
        np.testing.assert_array_equal(s.scores, scores)
        np.testing.assert_array_equal(s.labels, labels)
        assert p.read_text().splitlines()[0] == "sample_id,label,score"

    def test_roc_csv_schema(self, tmp_path):
        p = tmp_path / "roc.csv"
        write_roc_csv(str(p), ScoredSet([0.2, 0.9], [0, 1]))
        lines = p.read_text().splitlines()
        assert lines[0] == "threshold,fpr,tpr"
        assert lines[1].startswith("inf,0,0")

    def test_validation(self):
        with pytest.raises(ValueError, match="labels"):
            ScoredSet([0.5], [2])
        with pytest.raises(ValueError, match="length"):
            ScoredSet([0.5, 0.6], [0])
