"""Random-forest regression on padded design matrices.

Tree growing is delegated to scikit-learn's variance-reduction CART; this
module fixes the defaults, seeding and the degenerate depth-0 case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .preprocessing import ModelError


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 5
    max_features: float = 1 / 3
    bootstrap: bool = True
    rng_seed: int = 0
    n_jobs: int = 1

    def validate(self):
        if self.n_trees < 1:
            raise ModelError("forest n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ModelError("forest min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ModelError("forest max_depth must be >= 0")
        if not 0 < self.max_features <= 1:
            raise ModelError("forest max_features must lie in (0, 1]")


@dataclass
class ForestModel:
    params: ForestParams
    estimator: RandomForestRegressor | None = None
    constants: np.ndarray | None = None  # per-tree root values when max_depth == 0

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if self.estimator is None:
            return np.full(len(X), self.constants.mean())
        return self.estimator.predict(X)


def forest_fit(X, y, params: ForestParams = ForestParams()) -> ForestModel:
    params.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ModelError("forest: empty design matrix")
    if len(y) != len(X):
        raise ModelError("forest: X and y lengths differ")
    if len(y) < params.min_samples_leaf:
        raise ModelError(f"forest: {len(y)} samples < min_samples_leaf={params.min_samples_leaf}")
    if params.max_depth == 0:
        rng = np.random.default_rng(params.rng_seed)
        if params.bootstrap:
            consts = np.array([y[rng.integers(0, len(y), len(y))].mean() for _ in range(params.n_trees)])
        else:
            consts = np.full(params.n_trees, y.mean())
        return ForestModel(params, None, consts)
    est = RandomForestRegressor(
        n_estimators=params.n_trees,
        max_depth=params.max_depth,
        min_samples_leaf=params.min_samples_leaf,
        max_features=params.max_features,
        bootstrap=params.bootstrap,
        random_state=params.rng_seed,
        n_jobs=params.n_jobs,
    )
    est.fit(X, y)
    return ForestModel(params, est)


def forest_predict(model: ForestModel, X) -> np.ndarray:
    return model.predict(X)
