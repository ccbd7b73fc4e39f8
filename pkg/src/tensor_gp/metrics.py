"""Accuracy metrics for functional predictions."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.signal import find_peaks

from .errors import DimensionError, ParameterError

__all__ = [
    "VAR_FLOOR",
    "EvaluationReport",
    "rmse",
    "per_sample_rmse",
    "msll",
    "main_lobe_mask",
    "lobe_metrics",
    "evaluate",
]

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12
PEAK_PROMINENCE = 0.05


@dataclass
class EvaluationReport:
    rmse: float
    msll: float
    per_sample_rmse: np.ndarray
    lobe_rmse: float
    lobe_msll: float
    n_test: int
    n_var_floored: int = 0
    n_lobe_skipped: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_sample_rmse"] = self.per_sample_rmse.tolist()
        return d


def _pair(truth, pred):
    y = np.atleast_2d(np.asarray(truth, dtype=float))
    yh = np.atleast_2d(np.asarray(pred, dtype=float))
    if y.shape != yh.shape:
        raise DimensionError(f"shape mismatch: {y.shape} vs {yh.shape}")
    return y, yh


def per_sample_rmse(truth, pred_mean) -> np.ndarray:
    y, yh = _pair(truth, pred_mean)
    return np.sqrt(np.mean((y - yh) ** 2, axis=1))


def rmse(truth, pred_mean) -> float:
    """Mean over samples of each sample's root-mean-square error.

    Not the pooled RMSE: every curve is rooted before averaging.
    """
    return float(np.mean(per_sample_rmse(truth, pred_mean)))


def _floored(var):
    v = np.asarray(var, dtype=float)
    if np.any(~np.isfinite(v)):
        raise ParameterError("predictive variances must be finite")
    low = v < VAR_FLOOR
    n = int(low.sum())
    if n:
        warnings.warn(f"{n} predictive variances floored at {VAR_FLOOR:g}", RuntimeWarning, stacklevel=3)
    return np.maximum(v, VAR_FLOOR), n


def _nll_terms(y, yh, var):
    return 0.5 * np.log(2 * np.pi * var) + (y - yh) ** 2 / (2 * var)


def msll(truth, pred_mean, pred_var) -> float:
    """Mean Gaussian negative log density of the truth over all samples and angles."""
    y, yh = _pair(truth, pred_mean)
    _, v = _pair(truth, pred_var)
    v, _ = _floored(v)
    return float(np.mean(_nll_terms(y, yh, v)))


def main_lobe_mask(curve, half_width: float = 7.0, angles=None, full_circle: bool = False) -> np.ndarray:
    """Angles within ``half_width`` degrees of any peak of ``curve``.

    Peaks are strict local maxima whose prominence is at least 5% of the
    curve's range. Windows around multiple peaks are merged. Wraparound is
    applied only when ``full_circle`` is set (a 360-degree domain).
    """
    y = np.asarray(curve, dtype=float)
    if half_width < 0:
        raise ParameterError("half_width must be >= 0")
    ang = np.arange(len(y), dtype=float) if angles is None else np.asarray(angles, dtype=float)
    if ang.shape != y.shape:
        raise DimensionError("angles and curve lengths differ")
    span = float(np.ptp(y)) if len(y) else 0.0
    if span <= 0:
        warnings.warn("flat curve has no peaks; main-lobe mask is empty", RuntimeWarning, stacklevel=2)
        return np.zeros(len(y), dtype=bool)
    if full_circle:
        n = len(y)
        ext = np.concatenate([y, y, y])
        pk, _ = find_peaks(ext, prominence=PEAK_PROMINENCE * span)
        peaks = np.unique(pk[(pk >= n) & (pk < 2 * n)] - n)
    else:
        peaks, _ = find_peaks(y, prominence=PEAK_PROMINENCE * span)
    mask = np.zeros(len(y), dtype=bool)
    for p in peaks:
        d = np.abs(ang - ang[p])
        if full_circle:
            d = np.minimum(d, 360.0 - d)
        mask |= d <= half_width + 1e-9
    return mask


def lobe_metrics(truth, pred_mean, pred_var, half_width: float = 7.0, angles=None,
                 full_circle: bool = False, masks: Optional[np.ndarray] = None):
    """RMSE and MSLL restricted to each sample's main lobe.

    Samples with an empty mask are skipped. Returns
    ``(lobe_rmse, lobe_msll, n_skipped)``; both metrics are NaN when every
    sample is skipped.
    """
    y, yh = _pair(truth, pred_mean)
    _, v = _pair(truth, pred_var)
    v, _ = _floored(v)
    if masks is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            masks = np.array([main_lobe_mask(c, half_width, angles, full_circle) for c in y])
    r, s, skipped = [], [], 0
    for n in range(len(y)):
        m = masks[n]
        if not m.any():
            skipped += 1
            continue
        r.append(np.sqrt(np.mean((y[n, m] - yh[n, m]) ** 2)))
        s.append(np.mean(_nll_terms(y[n, m], yh[n, m], v[n, m])))
    if skipped:
        log.warning("%d samples with an empty main-lobe mask skipped", skipped)
    if not r:
        return float("nan"), float("nan"), skipped
    return float(np.mean(r)), float(np.mean(s)), skipped


def evaluate(truth, pred_mean, pred_var, half_width: float = 7.0, angles=None,
             full_circle: bool = False) -> EvaluationReport:
    """All metrics in one report."""
    y, yh = _pair(truth, pred_mean)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        _, n_floor = _floored(pred_var)
        lr, lm, skipped = lobe_metrics(y, yh, pred_var, half_width, angles, full_circle)
        ps = per_sample_rmse(y, yh)
        m = msll(y, yh, pred_var)
    return EvaluationReport(
        rmse=float(ps.mean()), msll=m, per_sample_rmse=ps, lobe_rmse=lr, lobe_msll=lm,
        n_test=len(y), n_var_floored=n_floor, n_lobe_skipped=skipped,
    )
