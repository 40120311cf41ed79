"""Chained-equation imputers: MICE (ridge) and MissForest (random forests).

Both start from the training-mean fill and revisit features in ascending
order of missingness, regressing each on all the others.  Transform replays
the fitted per-feature models on a new grid for the same number of rounds.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .base import FittedImputer, ImputerError, column_scale, mean_fill

log = logging.getLogger(__name__)


def visit_order(M: np.ndarray) -> list[int]:
    """Features with at least one observed entry, least missing first.

    Fully observed features get a model too, so that a new grid missing
    them can still be filled.
    """
    miss = (~M).sum(axis=0)
    obs = M.sum(axis=0)
    cand = [j for j in range(M.shape[1]) if obs[j] > 0 and M.shape[1] > 1]
    return sorted(cand, key=lambda j: (miss[j], j))


def _ridge(X: np.ndarray, y: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    coef = np.linalg.solve(Xc.T @ Xc + alpha * np.eye(X.shape[1]), Xc.T @ (y - ym))
    return coef, float(ym - xm @ coef)


class MICEImputer(FittedImputer):
    """Chained ridge regressions with predictive noise, averaged over chains.

    Each chain draws its own noise (residual standard deviation times a
    standard normal) when filling, which yields several imputations; the
    returned grid is their mean.  ``change_history_`` holds, per chain, the
    Frobenius norm of the change in imputed cells after each round.
    """

    method = "MICE"
    defaults = {"n_rounds": 10, "n_chains": 5, "ridge_alpha": 1.0}

    def check_params(self):
        if self.params["n_rounds"] < 1 or self.params["n_chains"] < 1 or self.params["ridge_alpha"] < 0:
            raise ImputerError("MICE: n_rounds and n_chains must be >= 1, ridge_alpha >= 0")

    def _standardize(self, X, M):
        return (mean_fill(X, M, self.means_) - self.means_) / self.scale_

    def _fit(self, X, M, grid):
        self.scale_ = column_scale(X, M)
        self.order_ = visit_order(M)
        Z0 = self._standardize(X, M)
        self.models_ = []
        self.change_history_ = []
        for c in range(self.params["n_chains"]):
            rng = np.random.default_rng([self.seed, c])
            Z = Z0.copy()
            models = {}
            changes = []
            for _ in range(self.params["n_rounds"]):
                before = Z[~M].copy()
                for j in self.order_:
                    others = np.arange(Z.shape[1]) != j
                    obs = M[:, j]
                    coef, icpt = _ridge(Z[obs][:, others], Z[obs, j], self.params["ridge_alpha"])
                    resid = Z[obs, j] - (Z[obs][:, others] @ coef + icpt)
                    sd = float(resid.std())
                    models[j] = (coef, icpt, sd)
                    miss = ~obs
                    if miss.any():
                        Z[miss, j] = Z[miss][:, others] @ coef + icpt + sd * rng.standard_normal(miss.sum())
                changes.append(float(np.linalg.norm(Z[~M] - before)))
            self.models_.append(models)
            self.change_history_.append(changes)

    def _fill(self, X, M, grid):
        Z0 = self._standardize(X, M)
        total = np.zeros_like(Z0)
        for c, models in enumerate(self.models_):
            rng = np.random.default_rng([self.seed, c, 1])
            Z = Z0.copy()
            for _ in range(self.params["n_rounds"]):
                for j in self.order_:
                    miss = ~M[:, j]
                    if not miss.any():
                        continue
                    coef, icpt, sd = models[j]
                    others = np.arange(Z.shape[1]) != j
                    Z[miss, j] = Z[miss][:, others] @ coef + icpt + sd * rng.standard_normal(miss.sum())
            total += Z
        return total / len(self.models_) * self.scale_ + self.means_


class MissForestImputer(FittedImputer):
    """Iterated random-forest regressions per feature.

    Iteration stops when the normalized change in imputed cells,
    ``sum((new - old)^2) / sum(new^2)``, grows for the first time (the
    previous round's fill and forests are kept) or after ``max_iter``
    rounds.  ``change_history_`` records the change after each round.
    """

    method = "MissForest"
    defaults = {"max_iter": 10, "n_trees": 50, "min_samples_leaf": 5, "max_features": "sqrt", "max_depth": None,
                "max_samples": None}

    def check_params(self):
        if self.params["max_iter"] < 1 or self.params["n_trees"] < 1:
            raise ImputerError("MissForest: max_iter and n_trees must be >= 1")

    def _forest(self, round_no: int, j: int) -> RandomForestRegressor:
        seed = int(np.random.SeedSequence([self.seed, round_no, j]).generate_state(1)[0])
        return RandomForestRegressor(
            n_estimators=self.params["n_trees"],
            min_samples_leaf=self.params["min_samples_leaf"],
            max_features=self.params["max_features"],
            max_depth=self.params["max_depth"],
            max_samples=self.params["max_samples"],
            random_state=seed,
            n_jobs=1,
        )

    def _fit(self, X, M, grid):
        self.order_ = visit_order(M)
        Z = mean_fill(X, M, self.means_)
        miss = ~M
        prev_change = np.inf
        accepted = None
        self.change_history_ = []
        self.n_rounds_ = 0
        for r in range(self.params["max_iter"]):
            old = Z.copy()
            forests = {}
            for j in self.order_:
                obs = M[:, j]
                others = np.arange(Z.shape[1]) != j
                f = self._forest(r, j).fit(Z[obs][:, others], Z[obs, j])
                if not obs.all():
                    Z[~obs, j] = f.predict(Z[~obs][:, others])
                forests[j] = f
            denom = float((Z[miss] ** 2).sum())
            change = float(((Z[miss] - old[miss]) ** 2).sum()) / denom if denom > 0 else 0.0
            self.change_history_.append(change)
            if change > prev_change:
                break
            accepted = forests
            self.n_rounds_ = r + 1
            prev_change = change
            if not self.order_:
                break
        self.forests_ = accepted or {}

    def _fill(self, X, M, grid):
        Z = mean_fill(X, M, self.means_)
        for _ in range(self.n_rounds_):
            for j in self.order_:
                miss = ~M[:, j]
                if not miss.any():
                    continue
                others = np.arange(Z.shape[1]) != j
                Z[miss, j] = self.forests_[j].predict(Z[miss][:, others])
        return Z
