import numpy as np
import pytest
from scipy.stats import norm

from tensor_gp.errors import DimensionError
from tensor_gp.metrics import evaluate, lobe_metrics, main_lobe_mask, msll, per_sample_rmse, rmse


def test_rmse_is_mean_of_per_sample_roots():
    y = np.zeros((2, 4))
    yh = np.array([[1.0, 1.0, 1.0, 1.0], [2.0, 0.0, 0.0, 0.0]])
    assert np.allclose(per_sample_rmse(y, yh), [1.0, 1.0])
    assert rmse(y, yh) == 1.0
    # pooled RMSE would differ for unequal per-sample errors
    yh[1] = [3.0, 0, 0, 0]
    assert rmse(y, yh) == pytest.approx((1.0 + 1.5) / 2)


def test_msll_matches_gaussian_log_density(rng):
    y, m = rng.normal(size=(2, 3, 50))
    v = rng.uniform(0.1, 2, size=(3, 50))
    assert msll(y, m, v) == pytest.approx(-np.mean(norm.logpdf(y, m, np.sqrt(v))), rel=1e-12)


def test_msll_floors_tiny_variances():
    with pytest.warns(RuntimeWarning):
        val = msll(np.zeros(3), np.zeros(3), np.array([0.0, 1.0, 1.0]))
    assert np.isfinite(val)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        rmse(np.zeros((2, 3)), np.zeros((2, 4)))


def test_main_lobe_single_peak():
    ang = np.arange(181.0)
    y = np.exp(-0.5 * ((ang - 90) / 10) ** 2)
    m = main_lobe_mask(y, 7, ang)
    assert np.array_equal(np.flatnonzero(m), np.arange(83, 98))


def test_main_lobe_two_peaks_union():
    ang = np.arange(181.0)
    y = np.exp(-0.5 * ((ang - 40) / 5) ** 2) + 0.8 * np.exp(-0.5 * ((ang - 140) / 5) ** 2)
    m = main_lobe_mask(y, 7, ang)
    assert np.array_equal(np.flatnonzero(m), np.r_[33:48, 133:148])


def test_main_lobe_wraps_on_full_circle():
    ang = np.arange(360.0)
    d = np.minimum(np.abs(ang - 2), 360 - np.abs(ang - 2))
    y = np.exp(-0.5 * (d / 8) ** 2)
    m = main_lobe_mask(y, 7, ang, full_circle=True)
    assert np.array_equal(np.flatnonzero(m), np.r_[0:10, 355:360])
    # without wraparound the window is truncated at the domain edge
    m2 = main_lobe_mask(y, 7, ang, full_circle=False)
    assert not m2[355:].any()


def test_small_ripples_are_not_peaks():
    ang = np.arange(181.0)
    y = np.exp(-0.5 * ((ang - 90) / 10) ** 2) + 0.01 * np.sin(ang)
    m = main_lobe_mask(y, 7, ang)
    assert np.flatnonzero(m).min() >= 80 and np.flatnonzero(m).max() <= 100


def test_flat_curve_warns_and_is_skipped():
    with pytest.warns(RuntimeWarning):
        assert not main_lobe_mask(np.ones(20)).any()
    y = np.vstack([np.ones(181), np.exp(-0.5 * ((np.arange(181.0) - 90) / 10) ** 2)])
    r, s, skipped = lobe_metrics(y, y + 0.1, np.full_like(y, 0.01), angles=np.arange(181.0))
    assert skipped == 1
    assert r == pytest.approx(0.1)
    assert s == pytest.approx(0.5 * np.log(2 * np.pi * 0.01) + 0.5)


def test_evaluate_report(rng):
    ang = np.arange(181.0)
    y = np.exp(-0.5 * ((ang - rng.uniform(30, 150, size=(4, 1))) / 10) ** 2)
    m = y + 0.05 * rng.normal(size=y.shape)
    v = np.full_like(y, 0.01)
    rep = evaluate(y, m, v, 7, ang)
    assert rep.n_test == 4 and rep.n_lobe_skipped == 0
    assert rep.rmse == pytest.approx(rmse(y, m))
    assert rep.msll == pytest.approx(msll(y, m, v))
    assert set(rep.to_dict()) >= {"rmse", "msll", "lobe_rmse", "lobe_msll"}
