"""Single-value imputers: mean, median, group mean, feed-forward, indicator + mean."""

from __future__ import annotations

import numpy as np

from ..datamodel import LACTATE, AlignedGrid, categorize_lactate_array
from .base import FittedImputer, ImputerError, mean_fill

N_GROUPS = 4


class MeanImputer(FittedImputer):
    method = "Mean"

    def _fill(self, X, M, grid):
        return mean_fill(X, M, self.means_)


class MedianImputer(FittedImputer):
    method = "Median"

    def _fit(self, X, M, grid):
        self.medians_ = np.array([np.median(X[M[:, j], j]) if M[:, j].any() else 0.0 for j in range(X.shape[1])])

    def _fill(self, X, M, grid):
        return mean_fill(X, M, self.medians_)


def previous_lactate_group(grid: AlignedGrid) -> np.ndarray:
    """Severity band of the latest observed lactate strictly before each row, -1 if none.

    The search is confined to the row's own stay.
    """
    j = grid.feature_index(LACTATE)
    n = grid.n_rows
    obs = grid.mask[:, j]
    idx = np.where(obs, np.arange(n), -1)
    last_upto = np.maximum.accumulate(idx) if n else idx
    prev = np.full(n, -1, dtype=np.int64)
    prev[1:] = last_upto[:-1]
    stay_start = np.repeat(grid.offsets[:-1], grid.lengths())
    valid = prev >= stay_start
    out = np.full(n, -1, dtype=np.int64)
    if valid.any():
        out[valid] = categorize_lactate_array(grid.values[prev[valid], j])
    return out


class GroupMeanImputer(FittedImputer):
    """Mean of the feature among training cells sharing the previous-lactate band.

    Cells with no earlier lactate in their stay, and bands with no training
    observation of the feature, fall back to the overall training mean.
    """

    method = "GroupMean"

    def _fit(self, X, M, grid):
        if LACTATE not in grid.features:
            raise ImputerError("GroupMean needs a lactate feature")
        groups = previous_lactate_group(grid)
        table = np.tile(self.means_, (N_GROUPS + 1, 1))
        for g in range(N_GROUPS):
            rows = groups == g
            for j in range(X.shape[1]):
                sel = rows & M[:, j]
                if sel.any():
                    table[g, j] = X[sel, j].mean()
        # last row serves the "no previous lactate" group (-1 indexes it)
        self.group_means_ = table

    def _fill(self, X, M, grid):
        return self.group_means_[previous_lactate_group(grid)]


def _fill_within_stays(X: np.ndarray, M: np.ndarray, grid: AlignedGrid, fallback: np.ndarray) -> np.ndarray:
    n, p = X.shape
    rows = np.arange(n)
    start = np.repeat(grid.offsets[:-1], grid.lengths())
    stop = np.repeat(grid.offsets[1:], grid.lengths())
    out = np.empty_like(X)
    for j in range(p):
        obs = M[:, j]
        fwd = np.maximum.accumulate(np.where(obs, rows, -1)) if n else rows
        bwd = np.minimum.accumulate(np.where(obs, rows, n)[::-1])[::-1] if n else rows
        src = np.where(fwd >= start, fwd, np.where(bwd < stop, bwd, -1))
        col = np.full(n, fallback[j])
        ok = src >= 0
        col[ok] = X[src[ok], j]
        out[:, j] = col
    return out


class FeedForwardImputer(FittedImputer):
    """Carry the last observation forward within a stay; leading gaps take the first one.

    Features never observed in a stay use the training mean.
    """

    method = "FeedForward"

    def _fill(self, X, M, grid):
        return _fill_within_stays(X, M, grid, self.means_)


INDICATOR_SUFFIX = "__obs"


class IndicatorMeanImputer(FittedImputer):
    """Mean imputation plus one 0/1 column per feature equal to the original mask."""

    method = "IndicatorMean"

    def transform(self, grid: AlignedGrid) -> AlignedGrid:
        done = super().transform(grid)
        orig = grid.mask
        indicators = orig.astype(np.float64)
        values = np.hstack([done.values, indicators])
        features = tuple(grid.features) + tuple(f + INDICATOR_SUFFIX for f in grid.features)
        prov = np.hstack([done.provenance_mask, np.ones_like(orig)])
        return AlignedGrid(
            stays=grid.stays,
            features=features,
            values=values,
            mask=np.ones(values.shape, dtype=bool),
            offsets=grid.offsets,
            bin_width_minutes=grid.bin_width_minutes,
            truth=None if grid.truth is None else np.hstack([grid.truth, indicators]),
            provenance_mask=prov,
        )

    def _fill(self, X, M, grid):
        return mean_fill(X, M, self.means_)
