"""Accuracy, confusion, ROC, AUC against the pairwise ranking oracle."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textcnn import metrics as MT
from textcnn.tensor import Pcg32


def mann_whitney_oracle(scores, labels):
    """O(n^2) pairwise statistic: P(s_pos > s_neg) + 0.5 P(tie)."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAccuracy:
    def test_all_correct(self):
        assert MT.accuracy([1, 0, 1], [1, 0, 1]) == 1.0

    def test_all_wrong(self):
        assert MT.accuracy([1, 0], [0, 1]) == 0.0

    def test_three_of_four(self):
        assert MT.accuracy([1, 1, 0, 0], [1, 1, 0, 1]) == 0.75

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            MT.accuracy([], [])


class TestConfusion:
    def test_counts_and_layout(self):
        preds = [0, 1, 1, 0, 1]
        labels = [0, 1, 0, 1, 1]
        out = MT.confusion(preds, labels)
        np.testing.assert_array_equal(out, [[1, 1], [1, 2]])
        assert out.sum() == 5


class TestRocCurve:
    def test_perfect_ranking_passes_through_corner(self):
        pts = MT.roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert (0.0, 1.0) in pts
        assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)

    def test_all_scores_equal_two_points(self):
        pts = MT.roc_curve([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])
        assert pts == [(0.0, 0.0), (1.0, 1.0)]

    def test_anti_perfect_passes_through_other_corner(self):
        pts = MT.roc_curve([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])
        assert (1.0, 0.0) in pts

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            MT.roc_curve([0.5, 0.6], [1, 1])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_and_bounded(self, seed):
        rng = Pcg32(seed)
        scores = rng.uniform_array(30)
        labels = (rng.uniform_array(30) < 0.5).astype(int)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        pts = MT.roc_curve(scores, labels)
        fpr = [p[0] for p in pts]
        tpr = [p[1] for p in pts]
        assert fpr == sorted(fpr) and tpr == sorted(tpr)
        assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
        assert len(pts) <= len(set(scores.tolist())) + 1


class TestAuc:
    def test_perfect_is_one(self):
        assert MT.auc([0.9, 0.8, 0.2], [1, 1, 0]) == 1.0

    def test_uninformative_is_half(self):
        assert MT.auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_matches_pairwise_oracle_on_random_instances(self):
        rng = Pcg32(17)
        for _ in range(20):
            n = 40
            scores = np.round(rng.uniform_array(n), 2)  # rounding forces ties
            labels = (rng.uniform_array(n) < 0.5).astype(int)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            got = MT.auc(scores, labels)
            want = mann_whitney_oracle(scores.tolist(), labels.tolist())
            assert abs(got - want) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_invariant_under_monotone_transforms(self, seed):
        rng = Pcg32(seed)
        scores = rng.uniform_array(25, -2, 2)
        labels = (rng.uniform_array(25) < 0.5).astype(int)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        base = MT.auc(scores, labels)
        assert abs(MT.auc(np.exp(scores), labels) - base) < 1e-12
        assert abs(MT.auc(scores * 3.0 + 1.0, labels) - base) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_label_swap_antisymmetry(self, seed):
        rng = Pcg32(seed)
        scores = rng.uniform_array(20)
        labels = (rng.uniform_array(20) < 0.5).astype(int)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert abs(MT.auc(scores, 1 - labels) - (1.0 - MT.auc(scores, labels))) < 1e-12


class TestEvalReport:
    def test_confusion_sums_to_set_size(self):
        rng = Pcg32(23)
        probs = rng.uniform_array(40)
        labels = (rng.uniform_array(40) < 0.5).astype(int)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        report = MT.evaluate_binary(probs, labels)
        assert report.confusion.sum() == 40
        assert 0.0 <= report.auc <= 1.0

    def test_threshold_is_half(self):
        report = MT.evaluate_binary([0.49, 0.51], [0, 1])
        assert report.accuracy == 1.0


class TestExports:
    def test_csv_format(self, tmp_path):
        path = tmp_path / "roc.csv"
        MT.write_roc_csv([(0.0, 0.0), (0.25, 0.75), (1.0, 1.0)], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "fpr,tpr"
        assert lines[1] == "0.000000,0.000000"
        assert lines[2] == "0.250000,0.750000"

    def test_svg_is_wellformed_with_diagonal_and_curve(self, tmp_path):
        path = tmp_path / "roc.svg"
        pts = [(0.0, 0.0), (0.1, 0.8), (1.0, 1.0)]
        MT.render_roc_svg(pts, path)
        root = ET.parse(path).getroot()
        assert root.tag.endswith("svg")
        tags = [child.tag.split("}")[-1] for child in root]
        assert "line" in tags and "polyline" in tags
        poly = [c for c in root if c.tag.endswith("polyline")][0]
        assert len(poly.get("points").split()) == len(pts)
