"""
Finite-difference checks of every layer kind and of the detection loss
"""

import numpy as np
import pytest

from heliodet.nn import gradcheck
from heliodet.nn.gradcheck import DEFAULT_SEEDS, LAYER_CASES, LOSS_CASES, TOLERANCE, relative_error, run_case, run_suite


class TestRelativeError:

    def test_small_values_use_absolute_scale(self):
        assert relative_error(np.array(1e-4), np.array(2e-4)) == pytest.approx(1e-4)

    def test_large_values_are_relative(self):
        assert relative_error(np.array(1000.0), np.array(1001.0)) == pytest.approx(1 / 1001)


@pytest.mark.parametrize("case", LAYER_CASES)
def test_layer_gradients(case):
    for seed in range(DEFAULT_SEEDS):
        result = run_case(case, seed)
        assert result.passed, f"{case} seed {seed}: max relative error {result.max_error:.3e}"
        assert result.checked > 0


@pytest.mark.parametrize("case", LOSS_CASES)
def test_loss_gradients(case):
    for seed in range(DEFAULT_SEEDS):
        result = run_case(case, seed)
        assert result.max_error <= TOLERANCE, f"{case} seed {seed}: max relative error {result.max_error:.3e}"
        assert result.checked > 0


def test_kinks_are_skipped_not_failed():
    # Leaky inputs sit well away from zero, so nothing needs skipping
    result = gradcheck.check_layer("leaky_relu", 0)
    assert result.skipped == 0
    assert result.checked > 0


def test_suite_reports_every_case():
    results = run_suite(seeds=1, cases=["linear", "yolo_loss_logits"])
    assert [r.case for r in results] == ["linear", "yolo_loss_logits"]
    assert all(r.passed for r in results)


def test_broken_gradient_is_caught():
    x = np.array([0.5, -1.0, 2.0], dtype=np.float32)
    wrong = 3 * x  # true gradient of sum(x^2) is 2x

    def evaluate():
        return float(np.sum(x.astype(np.float64) ** 2)), b""

    result = gradcheck.compare_gradients(evaluate, {"x": (x, wrong)}, "square", 0)
    assert not result.passed
