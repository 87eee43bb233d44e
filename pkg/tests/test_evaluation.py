"""
Unit tests for AUC, ROC curves, category summaries and top-k reports.
"""
from pathlib import Path

import numpy as np
import pytest

from annotator.evaluation import (
    LabelAUC,
    auc,
    category_report,
    evaluate_scores,
    format_topk,
    roc_points,
    topk_report,
    trapezoid_area,
    write_metrics_csv,
    write_roc_csv,
    write_summary_csv,
)
from mining.dataset import LabelSubset
from mining.ontology import load_ontology
from utils.errors import DataError
from utils.storage import read_csv

FIXTURES = Path(__file__).parent / "fixtures"


def _pairwise_auc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos, neg = scores[labels], scores[~labels]
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0) + 0.5 * (diff == 0)).mean())


class TestAUC:
    def test_perfect_and_reversed(self):
        """Test perfect ranking gives 1 and reversed ranking gives 0."""
        labels = [0, 0, 1, 1]
        assert auc([0.1, 0.2, 0.8, 0.9], labels) == 1.0
        assert auc([0.9, 0.8, 0.2, 0.1], labels) == 0.0

    def test_constant_scores(self):
        """Test a constant scorer gives one half."""
        assert auc(np.full(10, 0.5), [0, 1] * 5) == 0.5

    def test_ties_count_half(self):
        """Test a tied positive/negative pair counts one half."""
        assert auc([0.5, 0.5, 0.9], [0, 1, 1]) == pytest.approx(0.75)

    def test_matches_pairwise_oracle(self):
        """Test rank AUC against pairwise counting on 100 random instances with ties."""
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 60))
            labels = rng.random(n) < 0.4
            labels[0], labels[1] = True, False
            scores = np.round(rng.random(n), int(rng.integers(1, 3)))
            assert abs(auc(scores, labels) - _pairwise_auc(scores, labels)) <= 1e-12

    def test_invariant_under_increasing_transforms(self):
        """Test strictly increasing maps of the scores leave AUC unchanged."""
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(2, 50))
            labels = rng.random(n) < 0.5
            labels[0], labels[1] = True, False
            scores = np.round(rng.random(n), 2)
            expected = auc(scores, labels)
            transforms = (3.0 * scores + 1.0, np.exp(scores), scores**3, np.arctan(scores))
            for transformed in transforms:
                assert abs(auc(transformed, labels) - expected) <= 1e-12

    def test_negated_scores_and_flipped_labels(self):
        """Test auc(s, y) == auc(-s, 1 - y)."""
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(2, 50))
            labels = rng.random(n) < 0.3
            labels[0], labels[1] = True, False
            scores = np.round(rng.random(n), 1)
            assert abs(auc(scores, labels) - auc(-scores, ~labels)) <= 1e-12

    def test_single_class(self):
        """Test AUC is undefined without both classes."""
        with pytest.raises(DataError) as info:
            auc([0.1, 0.2], [1, 1])
        assert info.value.code == "undefined_auc"

    def test_length_mismatch(self):
        """Test scores and labels must align."""
        with pytest.raises(DataError):
            auc([0.1, 0.2, 0.3], [0, 1])


class TestROC:
    def test_curve_endpoints(self):
        """Test the staircase runs from (0, 0) to (1, 1)."""
        points = roc_points([0.9, 0.4, 0.6, 0.2], [1, 0, 1, 0])
        assert points[0] == (0.0, 0.0)
        assert points[-1] == (1.0, 1.0)

    def test_tied_scores_share_a_point(self):
        """Test equal scores step diagonally."""
        points = roc_points([0.5, 0.5, 0.9], [0, 1, 1])
        assert points == [(0.0, 0.0), (0.0, 0.5), (1.0, 1.0)]

    def test_trapezoid_equals_rank_auc(self):
        """Test the area under the ROC points equals the rank AUC."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            labels = rng.random(n) < 0.5
            labels[0], labels[1] = True, False
            scores = np.round(rng.random(n), 1)
            assert trapezoid_area(roc_points(scores, labels)) == pytest.approx(
                auc(scores, labels), abs=1e-12
            )


class TestReports:
    def setup_method(self):
        """Setup test fixtures."""
        self.o = load_ontology(FIXTURES / "golden_lexicon.tsv")
        # chest, lung, nodule, calcified
        self.subset = LabelSubset.from_ids([0, 2, 8, 14], self.o)

    def test_category_means(self):
        """Test unweighted means and population std per category."""
        per_label = [
            LabelAUC(label_id=0, auc=0.9, n_pos=5, n_neg=5),
            LabelAUC(label_id=2, auc=0.7, n_pos=5, n_neg=5),
            LabelAUC(label_id=8, auc=0.6, n_pos=5, n_neg=5),
        ]
        report = category_report(per_label, self.o)
        assert report.overall.mean_auc == pytest.approx(0.7333333333)
        assert report.overall.n_labels == 3
        assert report.per_category["body_part"].mean_auc == pytest.approx(0.8)
        assert report.per_category["body_part"].std_auc == pytest.approx(0.1)
        assert report.per_category["finding_type"].std_auc == 0.0
        assert "attribute" not in report.per_category
        assert [row[0] for row in report.rows()] == ["overall", "body_part", "finding_type"]

    def test_empty_report(self):
        """Test summarizing nothing."""
        with pytest.raises(DataError):
            category_report([], self.o)

    def test_evaluate_skips_single_class(self):
        """Test labels without both classes are skipped and reported."""
        scores = np.array([[0.9, 0.2, 0.5, 0.1], [0.1, 0.3, 0.6, 0.2], [0.8, 0.4, 0.7, 0.3]])
        targets = np.array([[1, 0, 1, 0], [0, 0, 1, 0], [1, 1, 1, 0]])
        evaluated, skipped = evaluate_scores(scores, targets, self.subset, threads=2)
        assert [e.label_id for e in evaluated] == [0, 2]
        assert skipped == [8, 14]
        assert evaluated[0].auc == 1.0
        assert evaluated[0].label_name == "chest"
        assert evaluated[1].category == "body_part"

    def test_evaluate_shape_check(self):
        """Test score columns must match the label subset."""
        with pytest.raises(DataError):
            evaluate_scores(np.zeros((3, 2)), np.zeros((3, 2)), self.subset)

    def test_csv_outputs(self, tmp_path):
        """Test metrics, summary and ROC CSV files."""
        scores = np.array([[0.9, 0.2, 0.5, 0.1], [0.1, 0.3, 0.6, 0.2], [0.8, 0.4, 0.7, 0.3]])
        targets = np.array([[1, 0, 1, 0], [0, 0, 1, 1], [1, 1, 0, 0]])
        evaluated, _ = evaluate_scores(scores, targets, self.subset)
        report = category_report(evaluated, self.o)
        write_metrics_csv(tmp_path / "metrics.csv", evaluated)
        write_summary_csv(tmp_path / "summary.csv", report)
        write_roc_csv(tmp_path / "roc.csv", scores, targets, self.subset)

        metrics = read_csv(tmp_path / "metrics.csv")
        assert [row["label_name"] for row in metrics] == ["chest", "lung", "nodule", "calcified"]
        assert metrics[0]["auc"] == "1.000000"
        summary = read_csv(tmp_path / "summary.csv")
        assert summary[0]["subset"] == "overall"
        assert summary[0]["n_labels"] == "4"
        roc = read_csv(tmp_path / "roc.csv")
        assert {row["label_id"] for row in roc} == {"0", "2", "8", "14"}


class TestTopK:
    def test_tp_fp_fn(self):
        """Test top-k sets against the true labels."""
        scores = np.array([0.9, 0.1, 0.8, 0.7, 0.2])
        report = topk_report(scores, [0, 1, 3], k=2)
        assert report.ranked == [0, 2]
        assert report.tp == {0}
        assert report.fp == {2}
        assert report.fn == {1, 3}

    def test_format(self):
        """Test the printed report lines."""
        scores = np.array([0.912, 0.1, 0.8])
        names = ["lung", "liver", "nodule"]
        report = topk_report(scores, [0], k=2)
        assert format_topk(report, scores, names) == [
            "lung (0.912) [TP]",
            "nodule (0.800) [FP]",
            "FN: -",
        ]

    def test_format_missed(self):
        """Test missed labels are listed in id order."""
        scores = np.array([0.2, 0.1, 0.8])
        names = ["lung", "liver", "nodule"]
        report = topk_report(scores, [1, 0], k=1)
        assert format_topk(report, scores, names)[-1] == "FN: lung, liver"
