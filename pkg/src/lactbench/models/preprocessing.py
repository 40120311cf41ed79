"""Shared model preprocessing: zero padding and standardization."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class ModelError(ValueError):
    pass


def pad_and_flatten(histories, max_window_bins: int) -> np.ndarray:
    """Left-pad each ``(features, bins)`` history with zeros and flatten.

    Rows are laid out time-major: the first ``n_features`` columns hold the
    oldest bin, the last ``n_features`` the most recent one.
    """
    histories = list(histories)
    if not histories:
        return np.zeros((0, 0))
    p = histories[0].shape[0]
    out = np.zeros((len(histories), max_window_bins, p))
    for i, h in enumerate(histories):
        L = h.shape[1]
        if h.shape[0] != p:
            raise ModelError(f"history {i} has {h.shape[0]} features, expected {p}")
        if L > max_window_bins:
            raise ModelError(f"history {i} spans {L} bins, more than max_window_bins={max_window_bins}")
        if L:
            out[i, max_window_bins - L:] = h.T
    return out.reshape(len(histories), max_window_bins * p)


@dataclass
class Standardizer:
    """Per-feature affine map fitted on training histories.

    Statistics pool every bin of every training history.  Features with
    zero spread keep std 1, so they map to zero.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, histories) -> "Standardizer":
        histories = list(histories)
        if len(histories) < 2:
            raise ModelError("standardization needs at least 2 training samples")
        cols = np.concatenate([h for h in histories], axis=1)
        mean = cols.mean(axis=1)
        std = cols.std(axis=1)
        flat = ~(std > 0)
        if flat.any():
            log.warning("constant feature(s) at index %s; using std 1", np.flatnonzero(flat).tolist())
        std = np.where(flat, 1.0, std)
        return cls(mean, std)

    def apply(self, histories) -> list[np.ndarray]:
        return [(h - self.mean[:, None]) / self.std[:, None] for h in histories]
