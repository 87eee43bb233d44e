"""
Unit tests for class weights, the bootstrapped target and the multi-label loss.
"""
import logging
import math

import numpy as np
import pytest
from pydantic import ValidationError

from annotator.loss import (
    ClassWeights,
    LossConfig,
    LossMode,
    bootstrap_target,
    class_weights,
    loss_gradient,
    multilabel_loss,
    per_label_loss,
)
from mining.dataset import LabelStats, label_stats
from utils.errors import DataError

UNIT = ClassWeights.ones(1)


def _cfg(mode: str, beta: float = 0.9) -> LossConfig:
    return LossConfig(mode=LossMode(mode), beta=beta)


class TestClassWeights:
    def test_chest_example(self):
        """Test weights from 9013 positives among 19992 examples."""
        w = class_weights(LabelStats(n_pos=np.array([9013]), n_neg=np.array([10979])))
        assert w.w_pos[0] == pytest.approx(19992 / 18026)
        assert w.w_pos[0] == pytest.approx(1.10907, abs=1e-5)
        assert w.w_neg[0] == pytest.approx(0.91047, abs=1e-5)

    def test_balance_identity(self):
        """Test w_pos * N_pos = w_neg * N_neg = N / 2 for every label."""
        rng = np.random.default_rng(0)
        matrix = (rng.random((500, 12)) < rng.random(12)).astype(np.uint8)
        matrix[0] = 1
        matrix[1] = 0
        stats = label_stats(matrix)
        w = class_weights(stats)
        assert np.allclose(w.w_pos * stats.n_pos, 250.0, rtol=0, atol=1e-12)
        assert np.allclose(w.w_neg * stats.n_neg, 250.0, rtol=0, atol=1e-12)

    def test_empty_side_counts_as_one(self, caplog):
        """Test a label without positives is weighted as if it had one."""
        stats = LabelStats(n_pos=np.array([0, 5]), n_neg=np.array([10, 5]))
        with caplog.at_level(logging.WARNING):
            w = class_weights(stats)
        assert w.w_pos[0] == pytest.approx(5.0)
        assert np.all(np.isfinite(w.w_pos))
        assert "no positive or no negative" in caplog.text

    def test_no_examples(self):
        """Test labels with no training cases at all."""
        with pytest.raises(DataError) as info:
            class_weights(LabelStats(n_pos=np.array([0]), n_neg=np.array([0])))
        assert info.value.code == "empty_label_counts"


class TestBootstrapTarget:
    def test_examples(self):
        """Test the soft target on known values."""
        assert bootstrap_target(1, 0.5, 0.9) == pytest.approx(0.95)
        assert bootstrap_target(0, 0.8, 0.9) == pytest.approx(0.08)

    def test_beta_one_is_label(self):
        """Test beta = 1 returns the label."""
        s = np.array([0.1, 0.7, 0.4])
        y = np.array([1, 0, 1])
        assert np.array_equal(bootstrap_target(y, s, 1.0), y.astype(float))


class TestLossValues:
    def test_half_score(self):
        """Test -log(0.5) for plain and bootstrapped targets at s = 0.5."""
        for mode in ("plain", "weighted", "weighted_bootstrap"):
            assert multilabel_loss([1], [0.5], UNIT, _cfg(mode)) == pytest.approx(math.log(2))

    def test_bootstrap_confident_score(self):
        """Test y = 1, s = 0.8 with beta = 0.9 gives target 0.98."""
        value = multilabel_loss([1], [0.8], UNIT, _cfg("weighted_bootstrap"))
        expected = -(0.98 * math.log(0.8) + 0.02 * math.log(0.2))
        assert value == pytest.approx(expected, abs=1e-12)
        assert value == pytest.approx(0.2508694385, abs=1e-9)

    def test_near_perfect_prediction(self):
        """Test scores at the clamp limits give almost zero loss."""
        y = np.array([1, 0, 1, 0])
        value = multilabel_loss(y, y.astype(float), ClassWeights.ones(4), _cfg("plain"))
        assert 0.0 < value < 1e-5

    def test_bootstrap_beta_one_equals_weighted(self):
        """Test bootstrapping with beta = 1 is the weighted loss."""
        rng = np.random.default_rng(1)
        w = ClassWeights(rng.uniform(0.5, 3, 6), rng.uniform(0.5, 3, 6))
        for _ in range(20):
            y = (rng.random((4, 6)) < 0.5).astype(float)
            s = rng.random((4, 6))
            a = multilabel_loss(y, s, w, _cfg("weighted_bootstrap", beta=1.0))
            b = multilabel_loss(y, s, w, _cfg("weighted"))
            assert a == pytest.approx(b, rel=1e-12)

    def test_plain_ignores_weights(self):
        """Test the plain mode uses unit weights."""
        w = ClassWeights(np.array([5.0]), np.array([0.1]))
        assert multilabel_loss([1], [0.3], w, _cfg("plain")) == pytest.approx(-math.log(0.3))
        assert multilabel_loss([1], [0.3], w, _cfg("weighted")) == pytest.approx(-5 * math.log(0.3))

    def test_batch_is_mean(self):
        """Test batched losses average per-sample sums."""
        y = np.array([[1, 0], [0, 1]])
        s = np.array([[0.7, 0.2], [0.4, 0.9]])
        w = ClassWeights.ones(2)
        cfg = _cfg("plain")
        expected = (multilabel_loss(y[0], s[0], w, cfg) + multilabel_loss(y[1], s[1], w, cfg)) / 2
        assert multilabel_loss(y, s, w, cfg) == pytest.approx(expected)

    def test_shape_mismatch(self):
        """Test labels, scores and weights must agree in length."""
        with pytest.raises(DataError):
            multilabel_loss([1, 0], [0.5], UNIT, _cfg("plain"))
        with pytest.raises(DataError):
            multilabel_loss([1, 0], [0.5, 0.5], UNIT, _cfg("plain"))

    def test_config_bounds(self):
        """Test beta and eps ranges."""
        with pytest.raises(ValidationError):
            LossConfig(beta=1.5)
        with pytest.raises(ValidationError):
            LossConfig(eps=0.5)


class TestNoiseDamping:
    def test_wrong_negative_label(self):
        """Test a confident score against a wrong zero label is penalized less when bootstrapped."""
        rng = np.random.default_rng(2)
        for _ in range(200):
            s = rng.uniform(0.5001, 0.999)
            beta = rng.uniform(0.0, 0.999)
            w_value = rng.uniform(0.2, 4.0)
            w = ClassWeights(np.array([w_value]), np.array([w_value]))
            boot = per_label_loss([0], [s], w, _cfg("weighted_bootstrap", beta))[0]
            plain = per_label_loss([0], [s], w, _cfg("weighted"))[0]
            assert boot < plain


class TestGradient:
    def test_finite_differences(self):
        """Test dL/ds against central differences with the soft target held fixed."""
        rng = np.random.default_rng(3)
        eps = 1e-6
        for _ in range(100):
            k = int(rng.integers(1, 9))
            y = (rng.random(k) < 0.5).astype(float)
            s = rng.uniform(0.1, 0.9, k)
            w = ClassWeights(rng.uniform(0.5, 3, k), rng.uniform(0.5, 3, k))
            mode = rng.choice(["plain", "weighted", "weighted_bootstrap"])
            cfg = _cfg(str(mode), beta=float(rng.uniform(0.5, 1.0)))
            analytic = loss_gradient(y, s, w, cfg)

            if cfg.mode == LossMode.WEIGHTED_BOOTSTRAP:
                target, fixed = bootstrap_target(y, s, cfg.beta), _cfg("weighted")
            else:
                target, fixed = y, cfg
            for c in range(k):
                up, down = s.copy(), s.copy()
                up[c] += eps
                down[c] -= eps
                numeric = (
                    per_label_loss(target, up, w, fixed)[c] - per_label_loss(target, down, w, fixed)[c]
                ) / (2 * eps)
                assert abs(analytic[c] - numeric) <= 1e-8 * max(1.0, abs(analytic[c]))

    def test_batch_gradient_is_averaged(self):
        """Test the batch gradient divides per-sample gradients by N."""
        y = np.array([[1, 0], [0, 1], [1, 1]])
        s = np.array([[0.7, 0.2], [0.4, 0.9], [0.3, 0.6]])
        w = ClassWeights(np.array([1.5, 0.8]), np.array([0.7, 1.2]))
        cfg = _cfg("weighted_bootstrap")
        batch = loss_gradient(y, s, w, cfg)
        for i in range(3):
            assert np.allclose(batch[i], loss_gradient(y[i], s[i], w, cfg) / 3)

    def test_correct_positive(self):
        """Test a positive at the upper clamp still pushes the score up."""
        cfg = LossConfig(mode=LossMode.WEIGHTED, eps=1e-7)
        w = ClassWeights(np.array([2.0]), np.array([1.0]))
        grad = loss_gradient([1], [1.0], w, cfg)
        assert grad[0] == pytest.approx(-2.0 / (1 - 1e-7))
