"""Regression metrics in raw target units."""

from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


def _check(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.ndim != 1 or y_true.shape != y_pred.shape:
        raise MetricError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if len(y_true) == 0:
        raise MetricError("empty input")
    if not (np.all(np.isfinite(y_true)) and np.all(np.isfinite(y_pred))):
        raise MetricError("non-finite input")
    return y_true, y_pred


def mae(y_true, y_pred) -> float:
    y_true, y_pred = _check(y_true, y_pred)
    return float(np.mean(np.abs(y_true - y_pred)))


def rmse(y_true, y_pred) -> float:
    y_true, y_pred = _check(y_true, y_pred)
    e = y_true - y_pred
    return float(np.sqrt(np.mean(e * e)))


def r2(y_true, y_pred) -> float:
    """``1 - SSE / SST`` with SST taken about the mean of ``y_true``.

    The mean is the correctly rounded one (``math.fsum``), so predicting it
    everywhere scores exactly 0.  For constant ``y_true`` the ratio is
    undefined: the result is 0.0 when the predictions equal that constant
    and ``-inf`` otherwise (logged).
    """
    y_true, y_pred = _check(y_true, y_pred)
    e = y_true - y_pred
    sse = float(e @ e)
    if np.all(y_true == y_true[0]):
        if sse == 0.0:
            return 0.0
        log.warning("r2 undefined for constant y_true with non-matching predictions; returning -inf")
        return float("-inf")
    d = y_true - math.fsum(y_true) / len(y_true)
    return 1.0 - sse / float(d @ d)


METRICS = {"MAE": mae, "RMSE": rmse, "R2": r2}
LOWER_IS_BETTER = {"MAE": True, "RMSE": True, "R2": False}
