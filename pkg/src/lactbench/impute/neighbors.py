"""K-nearest-neighbour imputation against the training rows."""

from __future__ import annotations

import numpy as np

from .base import FittedImputer, ImputerError


def partial_distances(A: np.ndarray, MA: np.ndarray, T: np.ndarray, MT: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance over co-observed coordinates, divided by their count.

    Returns an ``(len(A), len(T))`` matrix; pairs with no co-observed
    coordinate get ``inf``.  Columns are accumulated left to right.
    """
    d2 = np.zeros((len(A), len(T)))
    cnt = np.zeros((len(A), len(T)))
    for j in range(A.shape[1]):
        both = MA[:, j, None] & MT[None, :, j]
        diff = A[:, j, None] - T[None, :, j]
        d2 += np.where(both, diff * diff, 0.0)
        cnt += both
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, d2 / cnt, np.inf)


class KNNImputer(FittedImputer):
    """Average of the ``k`` nearest training rows that observe the missing feature.

    Distance ties are broken by training-row order.  When no training row
    both observes the feature and shares a coordinate with the query row,
    the training mean is used.
    """

    method = "KNN"
    defaults = {"k": 5, "chunk_size": 256}

    def check_params(self):
        if self.params["k"] < 1:
            raise ImputerError("KNN: k must be >= 1")

    def _fit(self, X, M, grid):
        self.train_values_ = np.where(M, X, 0.0)
        self.train_mask_ = M.copy()

    def _fill(self, X, M, grid):
        k = self.params["k"]
        T, MT = self.train_values_, self.train_mask_
        A = np.where(M, X, 0.0)
        out = np.tile(self.means_, (len(X), 1))
        need = np.flatnonzero(~M.all(axis=1))
        step = self.params["chunk_size"]
        for start in range(0, len(need), step):
            rows = need[start:start + step]
            D = partial_distances(A[rows], M[rows], T, MT)
            for i, r in enumerate(rows):
                order = np.argsort(D[i], kind="stable")
                finite = np.isfinite(D[i][order])
                for j in np.flatnonzero(~M[r]):
                    cand = order[finite & MT[order, j]][:k]
                    if len(cand):
                        out[r, j] = np.mean(T[cand, j])
        return out
