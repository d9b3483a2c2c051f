"""
Tests for the Adam optimizer and cosine annealing.
"""

import math

import numpy as np
import pytest

from drive_sscl.exceptions import OptimizationError
from drive_sscl.learning.net import GradientTape, ModelParams
from drive_sscl.learning.optim import (
    EPSILON,
    AdamOptimizer,
    AdamState,
    CosineAnnealingSchedule,
    adam_step,
    cosine_lr,
)


@pytest.fixture
def params():
    """Two small tensors."""
    return ModelParams({"w": np.array([[1.0, -2.0], [0.5, 0.0]]), "b": np.array([0.1, 0.2])})


class TestAdam:
    """Tests for adam_step."""

    def test_zero_gradient_no_change(self, params):
        """Test zero gradients leave parameters unchanged."""
        before = params.copy()
        adam_step(params, GradientTape(params), 0.01, AdamState(params))
        for name in params.names:
            assert np.array_equal(params[name], before[name])

    def test_first_step(self, params):
        """Test the bias-corrected first step is lr * g / (|g| + eps)."""
        before = params.copy()
        tape = GradientTape(params)
        g = np.array([[0.3, -4.0], [1e-3, 2.0]])
        tape.add("w", g)
        adam_step(params, tape, 0.01, AdamState(params))
        expected = before["w"] - 0.01 * g / (np.abs(g) + EPSILON)
        np.testing.assert_allclose(params["w"], expected, rtol=1e-12)
        assert np.array_equal(params["b"], before["b"])

    def test_nan_names_tensor(self, params):
        """Test a NaN gradient aborts and names the tensor."""
        tape = GradientTape(params)
        tape.add("b", np.array([np.nan, 0.0]))
        before = params.copy()
        state = AdamState(params)
        with pytest.raises(OptimizationError, match="'b'"):
            adam_step(params, tape, 0.01, state)
        assert state.t == 0
        assert np.array_equal(params["w"], before["w"])

    def test_deterministic(self, params):
        """Test two identical runs produce bit-identical parameters."""
        runs = []
        for _ in range(2):
            p = params.copy()
            opt = AdamOptimizer(p)
            rng = np.random.default_rng(1)
            for _ in range(10):
                tape = GradientTape(p)
                tape.add("w", rng.normal(size=(2, 2)))
                tape.add("b", rng.normal(size=2))
                opt.step(p, tape, 0.01)
            runs.append(p)
        for name in params.names:
            assert np.array_equal(runs[0][name], runs[1][name])

    def test_minimizes_quadratic(self):
        """Test repeated steps approach the minimum of a quadratic bowl."""
        p = ModelParams({"x": np.array([3.0, -2.0])})
        opt = AdamOptimizer(p)
        for _ in range(500):
            tape = GradientTape(p)
            tape.add("x", 2 * p["x"])
            opt.step(p, tape, 0.05)
        assert np.all(np.abs(p["x"]) < 0.1)


class TestGradientTape:
    """Tests for gradient accumulation helpers."""

    def test_norms(self, params):
        """Test per-tensor and global norms."""
        tape = GradientTape(params)
        tape.add("w", np.array([[3.0, 0.0], [0.0, 0.0]]))
        tape.add("b", np.array([0.0, 4.0]))
        assert tape.norms() == {"w": 3.0, "b": 4.0}
        assert tape.global_norm() == pytest.approx(5.0)
        tape.scale(2.0)
        assert tape.global_norm() == pytest.approx(10.0)
        tape.zero()
        assert tape.global_norm() == 0.0


class TestCosineLr:
    """Tests for the cosine schedule."""

    def test_endpoints(self):
        """Test the schedule starts at lr_init and ends at lr_min."""
        assert cosine_lr(0, 100, 0.01) == 0.01
        assert cosine_lr(100, 100, 0.01, 0.001) == pytest.approx(0.001)

    def test_midpoint(self):
        """Test the halfway point is the mean of both rates."""
        assert cosine_lr(50, 100, 0.01, 0.002) == pytest.approx(0.006)

    def test_clamped(self):
        """Test steps outside [0, total] are clamped."""
        assert cosine_lr(150, 100, 0.01) == pytest.approx(0.0)
        assert cosine_lr(-3, 100, 0.01) == 0.01

    def test_monotone(self):
        """Test the rate never increases."""
        schedule = CosineAnnealingSchedule(40, 0.01)
        rates = [schedule(s) for s in range(41)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert rates[10] == pytest.approx(0.01 * (1 + math.cos(math.pi / 4)) / 2)

    def test_no_steps(self):
        """Test a zero-length schedule keeps the initial rate."""
        assert cosine_lr(0, 0, 0.01) == 0.01
