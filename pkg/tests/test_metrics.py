"""
Tests for class scoring, average precision and the evaluator.
"""

import numpy as np
import pytest

from drive_sscl.evaluation.metrics import (
    Evaluator,
    average_precision,
    class_centroids,
    class_scores,
    evaluate_scores,
    mean_ap,
    precision_recall_curve,
)
from drive_sscl.exceptions import ArgumentError
from drive_sscl.models import APConvention, EvalConfig, LearningMode, Readout


def _oracle_ap(scores, labels):
    """Integrate the step PR curve item by item."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    positives = sum(bool(x) for x in labels)
    tp, area, prev_recall = 0, 0.0, 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            tp += 1
        recall = tp / positives
        area += (tp / rank) * (recall - prev_recall)
        prev_recall = recall
    return area


class TestClassScores:
    """Tests for the prototype softmax readout."""

    def test_uniform_when_equidistant(self):
        """Test equal logits give 1/C."""
        np.testing.assert_allclose(class_scores(np.zeros(3), np.eye(4, 3)), [0.25] * 4)

    def test_matching_prototype_wins(self):
        """Test z equal to c_k puts the maximum on k."""
        scores = class_scores(np.eye(3)[1], np.eye(3))
        assert int(np.argmax(scores)) == 1

    def test_rows_sum_to_one(self, rng):
        """Test probabilities sum to one for a stack of embeddings."""
        scores = class_scores(rng.normal(size=(7, 4)), rng.normal(size=(5, 4)), temperature=0.3)
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-12)

    def test_centroids(self):
        """Test centroids average each class and leave empty classes at zero."""
        z = np.array([[1.0, 0.0], [3.0, 0.0], [0.0, 2.0]])
        c = class_centroids(z, [0, 0, 1], 3, normalize=False)
        np.testing.assert_allclose(c, [[2.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
        np.testing.assert_allclose(class_centroids(z, [0, None, 1], 2), [[1.0, 0.0], [0.0, 1.0]])


class TestAveragePrecision:
    """Tests for average_precision."""

    def test_perfect_ranking(self):
        """Test positives ranked first give 1.0."""
        assert average_precision([0.9, 0.8, 0.1, 0.0], [1, 1, 0, 0]) == 1.0

    def test_single_positive_last(self):
        """Test one positive ranked last of N gives 1/N."""
        assert average_precision([5, 4, 3, 2, 1], [0, 0, 0, 0, 1]) == pytest.approx(1 / 5)

    def test_no_positives(self):
        """Test zero positives is undefined."""
        assert average_precision([0.3, 0.2], [0, 0]) is None

    def test_ties_by_index(self):
        """Test tied scores are ranked by item index."""
        assert average_precision([0.5, 0.5], [1, 0]) == 1.0
        assert average_precision([0.5, 0.5], [0, 1]) == pytest.approx(0.5)

    def test_matches_oracle(self):
        """Test against step-curve integration on random vectors."""
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(1, 51))
            scores = np.round(rng.random(n), 1)
            labels = rng.random(n) < 0.4
            if not labels.any():
                labels[int(rng.integers(n))] = True
            assert average_precision(scores, labels) == pytest.approx(
                _oracle_ap(scores.tolist(), labels.tolist()), abs=1e-12
            )

    def test_monotone_transform_invariance(self, rng):
        """Test AP depends only on the ranking."""
        scores = rng.random(30)
        labels = rng.random(30) < 0.5
        labels[0] = True
        assert average_precision(scores, labels) == average_precision(np.exp(3 * scores) + 1, labels)

    def test_eleven_point(self):
        """Test the eleven-point convention on a hand case."""
        ap = average_precision([0.9, 0.8, 0.7], [1, 0, 1], APConvention.ELEVEN_POINT)
        # recall 0.5 at precision 1, recall 1.0 at precision 2/3
        assert ap == pytest.approx((6 * 1.0 + 5 * (2 / 3)) / 11)

    def test_length_mismatch(self):
        """Test mismatched inputs are rejected."""
        with pytest.raises(ArgumentError):
            average_precision([0.1, 0.2], [1])

    def test_pr_curve(self):
        """Test recall is non-decreasing and precision bounded."""
        curve = precision_recall_curve(np.array([0.2, 0.9, 0.4, 0.7]), np.array([1, 0, 1, 1]))
        assert np.all(np.diff(curve.recall) >= 0)
        assert np.all((curve.precision >= 0) & (curve.precision <= 1))
        assert curve.points[-1] == (1.0, 0.75)
        assert list(curve.thresholds) == [0.9, 0.7, 0.4, 0.2]


class TestMeanAp:
    """Tests for mean_ap."""

    def test_single(self):
        """Test one class gives its own AP."""
        assert mean_ap([0.7]) == 0.7

    def test_two(self):
        """Test {1, 0} averages to 0.5."""
        assert mean_ap([1.0, 0.0]) == 0.5

    def test_skips_undefined(self):
        """Test undefined entries are excluded."""
        aps = [0.1 * k for k in range(11)]
        assert mean_ap(aps + [None]) == pytest.approx(sum(aps) / 11)

    def test_nothing_defined(self):
        """Test an all-undefined vector is an argument error."""
        with pytest.raises(ArgumentError):
            mean_ap([None, None])


class TestEvaluator:
    """Tests for evaluation reports."""

    def test_evaluate_scores(self):
        """Test per-class rows and the overall mean."""
        scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
        report = evaluate_scores(scores, [0, 1, 0], ["a", "b"])
        assert [r.class_name for r in report.classes] == ["a", "b"]
        assert [r.positives for r in report.classes] == [2, 1]
        assert report.mean_ap == 1.0

    def test_prototype_readout(self):
        """Test perfectly aligned embeddings score 1.0 mAP."""
        evaluator = Evaluator(EvalConfig(), temperature=0.5)
        protos = np.eye(3)
        report = evaluator.evaluate(np.eye(3)[[0, 1, 2, 0]], [0, 1, 2, 0], ["x", "y", "z"], LearningMode.SCL, protos)
        assert report.readout == Readout.PROTOTYPE
        assert report.mean_ap == 1.0

    def test_auto_centroid_for_unsupervised(self):
        """Test unsupervised runs read out class centroids."""
        evaluator = Evaluator(EvalConfig())
        reference = (np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1])
        report = evaluator.evaluate(
            np.array([[0.9, 0.1], [0.2, 0.8]]), [0, 1], ["l", "r"], LearningMode.UNSUP, reference=reference
        )
        assert report.readout == Readout.CENTROID
        assert report.mean_ap == 1.0

    def test_unlabeled_rows_ignored(self):
        """Test rows without labels do not enter the table."""
        evaluator = Evaluator(EvalConfig())
        report = evaluator.evaluate(np.eye(2)[[0, 1, 0]], [0, None, None], ["a", "b"], LearningMode.FSL, np.eye(2))
        assert report.classes[0].positives == 1
        assert report.classes[1].ap is None

    def test_missing_readout_inputs(self):
        """Test a readout without its vectors is an argument error."""
        with pytest.raises(ArgumentError):
            Evaluator(EvalConfig(readout=Readout.CENTROID)).evaluate(np.eye(2), [0, 1], ["a", "b"], LearningMode.SCL)
