"""Shared fit/transform contract for all imputers."""

from __future__ import annotations

import logging
import pickle
from dataclasses import dataclass, field
from typing import Any, ClassVar, Mapping

import numpy as np

from .. import __version__
from ..datamodel import AlignedGrid

log = logging.getLogger(__name__)

STATE_FORMAT_VERSION = 1


class ImputerError(ValueError):
    pass


@dataclass(frozen=True)
class ImputerSpec:
    method: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0


class FittedImputer:
    """Base class: subclasses implement ``_fit`` and ``_fill``.

    ``_fill(values, mask, grid)`` returns a full matrix; only its entries at
    missing positions are used, so observed entries pass through untouched.
    """

    method: ClassVar[str] = ""
    defaults: ClassVar[dict] = {}

    def __init__(self, params: Mapping | None = None, seed: int = 0):
        unknown = set(params or {}) - set(self.defaults)
        if unknown:
            raise ImputerError(f"{self.method}: unknown parameter(s) {sorted(unknown)}")
        self.params = {**self.defaults, **(params or {})}
        self.seed = seed
        self.check_params()

    def check_params(self) -> None:
        pass

    # -- fitting ---------------------------------------------------------
    def fit(self, grid: AlignedGrid) -> "FittedImputer":
        self.features_ = tuple(grid.features)
        X = grid.values
        M = grid.mask
        n_obs = M.sum(axis=0)
        self.empty_features_ = [f for f, n in zip(self.features_, n_obs) if n == 0]
        for f in self.empty_features_:
            log.warning("%s: feature %r has no observed training entries; imputing 0.0", self.method, f)
        with np.errstate(invalid="ignore"):
            sums = np.where(M, X, 0.0).sum(axis=0)
            self.means_ = np.where(n_obs > 0, sums / np.maximum(n_obs, 1), 0.0)
        self._fit(X, M, grid)
        return self

    def _fit(self, X: np.ndarray, M: np.ndarray, grid: AlignedGrid) -> None:
        pass

    # -- transforming ----------------------------------------------------
    def transform(self, grid: AlignedGrid) -> AlignedGrid:
        if not hasattr(self, "features_"):
            raise ImputerError(f"{self.method}: transform called before fit")
        if tuple(grid.features) != self.features_:
            raise ImputerError(
                f"{self.method}: grid features {list(grid.features)} do not match fit-time features {list(self.features_)}"
            )
        X, M = grid.values, grid.mask
        if M.all():
            filled = X.copy()
        else:
            filled = np.asarray(self._fill(X, M, grid), dtype=np.float64)
            if filled.shape != X.shape:
                raise AssertionError(f"{self.method}: fill returned shape {filled.shape}, expected {X.shape}")
        out = np.where(M, X, filled)
        if not np.all(np.isfinite(out)):
            raise ImputerError(f"{self.method}: imputation left non-finite entries")
        return self._finish(grid, out)

    def _fill(self, X: np.ndarray, M: np.ndarray, grid: AlignedGrid) -> np.ndarray:
        raise NotImplementedError

    def _finish(self, grid: AlignedGrid, values: np.ndarray) -> AlignedGrid:
        prov = grid.mask if grid.provenance_mask is None else grid.provenance_mask
        return grid.with_arrays(values, np.ones_like(grid.mask), provenance_mask=prov)

    # -- persistence -----------------------------------------------------
    def save(self, path) -> None:
        payload = {
            "format_version": STATE_FORMAT_VERSION,
            "package_version": __version__,
            "method": self.method,
            "imputer": self,
        }
        with open(path, "wb") as fh:
            pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)


def load_imputer(path) -> FittedImputer:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if not isinstance(payload, dict) or payload.get("format_version") != STATE_FORMAT_VERSION:
        raise ImputerError(f"{path}: not an imputer state file of version {STATE_FORMAT_VERSION}")
    return payload["imputer"]


def mean_fill(X: np.ndarray, M: np.ndarray, means: np.ndarray) -> np.ndarray:
    return np.where(M, X, means[None, :])


def column_scale(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Observed-entry standard deviation per column (1 where undefined or zero)."""
    out = np.ones(X.shape[1])
    for j in range(X.shape[1]):
        col = X[M[:, j], j]
        if len(col) > 1 and col.std() > 0:
            out[j] = col.std()
    return out


def impute_quality(truth, imputed: AlignedGrid) -> dict[str, float]:
    """Per-feature RMSE over cells that were observed before corruption and then masked.

    ``truth`` is the ground-truth sidecar (array or grid carrying ``truth``);
    the corrupted mask is read from the imputed grid's provenance mask.
    Features without any corrupted cell map to NaN.
    """
    if isinstance(truth, AlignedGrid):
        truth = truth.truth if truth.truth is not None else truth.values
    truth = np.asarray(truth, dtype=float)
    n_feat = truth.shape[1] if truth.ndim == 2 else -1
    values = imputed.values[:, :n_feat] if n_feat >= 0 else imputed.values
    if truth.shape != values.shape:
        raise ImputerError(f"truth shape {truth.shape} does not match imputed grid {values.shape}")
    mask = imputed.provenance_mask if imputed.provenance_mask is not None else imputed.mask
    mask = mask[:, :n_feat]
    scored = np.isfinite(truth) & ~mask
    out = {}
    for j, f in enumerate(imputed.features[:n_feat]):
        sel = scored[:, j]
        out[f] = float(np.sqrt(np.mean((values[sel, j] - truth[sel, j]) ** 2))) if sel.any() else float("nan")
    return out
