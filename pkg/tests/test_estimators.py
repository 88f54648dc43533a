from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynperc.estimators import (
    COND_LIMIT,
    FitResult,
    SpeedEstimate,
    batch_speed,
    dichotomy_sign_test,
    expected_verdict,
    fit_exponential,
    jackknife_ratio_se,
    pool_estimates,
    regen_speed,
    size_bias_diagnostic,
)
from dynperc.walker import RegenerationBlocks


def synthetic_blocks(n, rng):
    dt = rng.exponential(1.0, n)
    dx = rng.binomial(1, 0.3, n) + rng.normal(0, 0.2, n)
    return RegenerationBlocks(dt, dx, np.ones(n, np.int64), np.zeros(n, np.int64), np.zeros(n, np.int64))


# ---------------------------------------------------------------- regen_speed


def test_regen_speed_constant_blocks():
    est = regen_speed([(2.0, 1.0)] * 40)
    assert est.value == 0.5 and est.std_error == 0.0
    assert est.method == "regeneration_ratio" and est.budget == 40


def test_regen_speed_needs_blocks():
    with pytest.raises(ValueError):
        regen_speed([(1.0, 1.0)] * 29)


def test_regen_speed_synthetic_ratio():
    est = regen_speed(synthetic_blocks(100_000, np.random.default_rng(1)))
    assert abs(est.value - 0.3) <= 4 * est.std_error


def test_delta_and_jackknife_agree():
    for seed in range(5):
        est = regen_speed(synthetic_blocks(10_000, np.random.default_rng(seed)))
        assert abs(est.jackknife_error / est.std_error - 1) < 0.10


def test_ratio_error_rate():
    rng = np.random.default_rng(2)
    ns = np.array([1_000, 10_000, 100_000])
    errs = []
    for n in ns:
        vals = [regen_speed(synthetic_blocks(n, rng)).value for _ in range(200)]
        errs.append(np.sqrt(np.mean((np.array(vals) - 0.3) ** 2)))
    slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert -0.6 <= slope <= -0.4


def test_jackknife_helper():
    dt = np.array([1.0, 2.0, 3.0, 4.0])
    dx = np.array([0.5, 1.0, 1.5, 2.0])
    assert jackknife_ratio_se(dt, dx) == pytest.approx(0.0, abs=1e-15)


# ---------------------------------------------------------------- batch_speed


def test_batch_speed_linear_trajectory():
    est = batch_speed(np.arange(1, 11) * 1.0, 100.0)
    assert est.value == pytest.approx(0.1) and est.std_error == 0.0 and est.method == "batch_means"


def test_batch_speed_needs_batches():
    with pytest.raises(ValueError):
        batch_speed(np.arange(1, 10), 9.0)
    with pytest.raises(ValueError):
        batch_speed(np.arange(1, 11), 0.0)


def test_batch_speed_coverage():
    rng = np.random.default_rng(3)
    hits = 0
    reps = 1000
    for _ in range(reps):
        inc = rng.normal(2.0, 3.0, 50)
        est = batch_speed(np.cumsum(inc), 50.0)
        hits += abs(est.value - 2.0) <= 1.96 * est.std_error
    # t with 49 dof at 1.96 covers about 94.4 %
    assert 0.92 <= hits / reps <= 0.97


def test_batch_speed_replica_matrix():
    pos = np.array([np.arange(1, 11) * 10.0, np.arange(1, 11) * 12.0])
    est = batch_speed(pos, 100.0)
    assert est.value == pytest.approx(1.1)
    assert est.std_error > 0


def test_pool_estimates():
    a = SpeedEstimate(0.3, 0.01, "batch_means", 10)
    b = SpeedEstimate(0.4, 0.01, "batch_means", 30)
    pooled = pool_estimates([a, b])
    assert pooled.value == pytest.approx(0.35)
    assert pooled.std_error == pytest.approx(math.sqrt(2) * 0.01 / 2)
    assert pooled.budget == 40
    with pytest.raises(ValueError):
        pool_estimates([])


def test_speed_estimate_z():
    assert SpeedEstimate(1.0, 0.5, "batch_means", 1).z(0.0) == 2.0
    assert SpeedEstimate(1.0, 0.0, "batch_means", 1).z(1.0) == 0.0
    assert SpeedEstimate(1.0, 0.0, "batch_means", 1).z(0.0) == math.inf


# ---------------------------------------------------------------- fit


def _model(lam, a):
    return a[0] + a[1] * np.exp(-lam) + a[2] * np.exp(-2 * lam)


def test_fit_exact_three_points():
    a = (1 / 3, -0.1, -0.5)
    lam = np.array([1.0, 2.0, 3.0])
    fit = fit_exponential(zip(lam, _model(lam, a), np.ones(3)))
    np.testing.assert_allclose(fit.coefficients, a, atol=1e-10)
    assert np.allclose(fit.covariance, fit.covariance.T)
    assert np.all(np.linalg.eigvalsh(fit.covariance) >= 0)


@settings(max_examples=100)
@given(a=st.tuples(*(st.floats(-2, 2) for _ in range(3))),
       lams=st.lists(st.floats(0.5, 4.0), min_size=3, max_size=8, unique=True))
def test_fit_exact_model_residuals(a, lams):
    lam = np.array(sorted(lams))
    if np.min(np.diff(lam)) < 0.2:
        return
    y = _model(lam, a)
    fit = fit_exponential(zip(lam, y, np.full(len(lam), 0.01)))
    scale = max(1.0, np.abs(y).max())
    assert np.abs(fit.predict(lam) - y).max() <= 1e-10 * scale


def test_fit_flags_planted_signs():
    rng = np.random.default_rng(4)
    lam = np.array([1.0, 1.5, 2.0, 2.5, 3.0, 3.5])
    a = (1 / 3, -0.1, -0.5)
    good = 0
    for _ in range(100):
        y = _model(lam, a) + rng.normal(0, 1e-4, lam.size)
        fit = fit_exponential(zip(lam, y, np.full(lam.size, 1e-4)))
        good += fit.z_a1 <= -3 and fit.z_a2 <= -3
    assert good >= 99


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_exponential([(1.0, 0.1, 1.0)] * 5)
    with pytest.raises(ValueError):
        fit_exponential([(1.0, 0.1, 1.0), (2.0, 0.1, 1.0), (2.0, 0.2, 1.0)])
    with pytest.raises(ValueError):
        fit_exponential([(1.0, 0.1, 1.0), (2.0, 0.1, 0.0), (3.0, 0.2, 1.0)])
    with pytest.raises(ValueError, match="ill-conditioned"):
        fit_exponential([(2.0, 0.1, 1.0), (2.0 + 1e-4, 0.1, 1.0), (2.0 + 2e-4, 0.2, 1.0)])
    assert COND_LIMIT == 1e10


# ---------------------------------------------------------------- verdict


def _fit_with(a1, se1):
    cov = np.diag([1.0, se1**2, 1.0])
    return FitResult(0.0, a1, 0.0, cov, a1 / se1, 0.0)


def test_verdicts():
    assert dichotomy_sign_test(_fit_with(-0.05, 0.005), 1.0, 0.5) == "increasing"
    assert dichotomy_sign_test(_fit_with(0.05, 0.005), 0.25, 0.5) == "decreasing"
    assert dichotomy_sign_test(_fit_with(0.01, 0.005), 0.5, 0.5) == "inconclusive"
    assert dichotomy_sign_test(_fit_with(-0.0149, 0.005)) == "inconclusive"
    assert expected_verdict(1.0, 0.5) == "increasing"
    assert expected_verdict(0.25, 0.5) == "decreasing"
    assert expected_verdict(0.5, 0.5) == "inconclusive"


# ---------------------------------------------------------------- size bias


def _tagged(dt, back):
    n = len(dt)
    return RegenerationBlocks(np.asarray(dt, float), np.zeros(n), np.ones(n, np.int64),
                              np.asarray(back, np.int64), np.zeros(n, np.int64))


def test_size_bias_deterministic():
    res = size_bias_diagnostic(_tagged(np.full(2000, 3.0), np.ones(2000)))
    assert res == (3.0, 3.0)


def test_size_bias_exponential_tagging():
    rng = np.random.default_rng(5)
    dt = rng.exponential(1.0, 400_000)
    back = (rng.random(dt.size) < 0.05 * dt).astype(np.int64)
    res = size_bias_diagnostic(_tagged(dt, back))
    assert res.conditional_mean == pytest.approx(2.0, abs=0.03)
    assert res.size_biased_mean == pytest.approx(2.0, abs=0.03)


def test_size_bias_needs_tagged_blocks():
    with pytest.raises(ValueError):
        size_bias_diagnostic(_tagged(np.ones(5000), np.zeros(5000)))
