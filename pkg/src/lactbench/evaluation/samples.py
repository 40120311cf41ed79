"""Forecasting samples: history up to bin t, lactate target at bin t + horizon."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datamodel import LACTATE, AlignedGrid, TaskParams


@dataclass(frozen=True, eq=False)
class Sample:
    """One forecasting example.

    ``history`` is ``(features, bins)`` covering bins ``t_index - bins + 1``
    through ``t_index``; ``target`` is the raw lactate (mmol/L) observed at
    ``t_index + horizon``.
    """

    stay_id: str
    t_index: int
    history: np.ndarray
    target: float


@dataclass(frozen=True)
class SampleSet:
    samples: list
    n_skipped_stays: int

    def __len__(self):
        return len(self.samples)

    @property
    def targets(self) -> np.ndarray:
        return np.array([s.target for s in self.samples], dtype=float)

    @property
    def histories(self) -> list:
        return [s.history for s in self.samples]

    def keys(self) -> list:
        return [(s.stay_id, s.t_index) for s in self.samples]


def eligible_anchors(observed: np.ndarray, min_anchor: int, horizon: int) -> np.ndarray:
    """Anchors ``t >= min_anchor`` whose target bin ``t + horizon`` is observed."""
    L = len(observed)
    t = np.arange(max(min_anchor, 0), L - horizon)
    return t[observed[t + horizon]] if len(t) else t


def build_samples(grid: AlignedGrid, task: TaskParams = TaskParams(), max_window_bins: int = 12) -> SampleSet:
    """Enumerate every eligible (stay, t) pair of a grid.

    A bin ``t`` is eligible when at least ``alpha`` minutes of the stay have
    elapsed (``t >= alpha / width - 1``) and lactate was observed, before any
    imputation, at ``t + beta / width``.  The pre-imputation mask is the
    grid's provenance mask when present, else its mask.  Histories keep the
    most recent ``max_window_bins`` bins up to and including ``t``.
    """
    width = grid.bin_width_minutes
    min_anchor = task.history_bins(width) - 1
    horizon = task.horizon_bins(width)
    if max_window_bins < 1:
        raise ValueError("max_window_bins must be >= 1")
    j = grid.feature_index(LACTATE)
    pre = grid.provenance_mask if grid.provenance_mask is not None else grid.mask
    out = []
    skipped = 0
    for i, stay in enumerate(grid.stays):
        sl = grid.stay_slice(i)
        observed = pre[sl, j]
        anchors = eligible_anchors(observed, min_anchor, horizon)
        if len(anchors) == 0:
            skipped += 1
            continue
        block = grid.values[sl]
        for t in anchors:
            lo = max(0, t - max_window_bins + 1)
            out.append(Sample(stay.stay_id, int(t), block[lo:t + 1].T.copy(), float(block[t + horizon, j])))
    return SampleSet(out, skipped)
