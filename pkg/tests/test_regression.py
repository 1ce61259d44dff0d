import warnings

import numpy as np
import pytest

from cbdm import kernels
from cbdm.data import Dataset
from cbdm.regression import RegressionError, estimate_effect, fit_weighted, predict


def test_exact_line():
    t = np.linspace(0, 1, 9)
    fit = fit_weighted(t, 2 * t + 1, np.full(9, 1 / 9))
    assert fit.coef[0] == pytest.approx(2, abs=1e-10)
    assert fit.intercept == pytest.approx(1, abs=1e-10)
    assert predict(fit, [0.0])[0] == pytest.approx(1, abs=1e-10)
    assert predict(fit, np.linspace(0, 1, 100)).shape == (100,)


def test_concentrated_weights_equal_subsample_fit():
    rng = np.random.default_rng(0)
    t, y = rng.normal(size=12), rng.normal(size=12)
    w = np.zeros(12)
    w[:5] = rng.uniform(1, 2, 5)
    a = fit_weighted(t, y, w / w.sum())
    b = fit_weighted(t[:5], y[:5], w[:5] / w.sum())
    np.testing.assert_allclose([a.intercept, a.coef[0]], [b.intercept, b.coef[0]], atol=1e-8)


def test_kernel_ridge_interpolates():
    t = np.array([0.0, 0.5, 1.0])
    y = np.array([1.0, -1.0, 2.0])
    w = np.array([0.2, 0.3, 0.5])
    fit = fit_weighted(t, y, w, "kernel_ridge", kernel=kernels.gaussian(0.5), ridge=1e-12)
    np.testing.assert_allclose(fit.predict(t), y, atol=1e-6)


def test_kernel_ridge_default_kernel():
    t = np.linspace(-1, 1, 20)
    fit = fit_weighted(t, np.sin(t), np.full(20, 0.05), "kernel_ridge")
    assert fit.kernel.bandwidth > 0
    assert np.max(np.abs(fit.predict(t) - np.sin(t))) < 1e-3


def test_dimension_mismatch():
    fit = fit_weighted(np.arange(5.0), np.arange(5.0), np.full(5, 0.2))
    with pytest.raises(RegressionError):
        predict(fit, np.zeros((3, 2)))


def test_unconfounded_slope():
    rng = np.random.default_rng(1)
    n = 500
    t = rng.normal(size=n)
    d = Dataset(t, rng.normal(size=(n, 1)), t + rng.normal(size=n), ("t",), ("x1",), "y")
    beta = estimate_effect(d, np.full(n, 1 / n))
    assert abs(beta - 1) <= 3 / np.sqrt(n)


def test_one_hot_raises():
    d = Dataset(np.arange(4.0), np.zeros((4, 1)) + np.arange(4.0)[:, None], np.arange(4.0), ("t",), ("x1",), "y")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(RegressionError):
            estimate_effect(d, np.array([1.0, 0, 0, 0]))


def test_missing_outcomes():
    with pytest.raises(RegressionError):
        fit_weighted(np.arange(3.0), None, np.full(3, 1 / 3))
