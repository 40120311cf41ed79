"""Imputation methods behind one fit/transform contract.

>>> imp = fit(ImputerSpec("Mean"), train_grid)     # doctest: +SKIP
>>> complete = transform(imp, test_grid)           # doctest: +SKIP
"""

from __future__ import annotations

from ..datamodel import AlignedGrid
from .autoencoder import AEImputer
from .base import FittedImputer, ImputerError, ImputerSpec, impute_quality, load_imputer
from .chained import MICEImputer, MissForestImputer
from .lowrank import MFImputer, PPCAImputer, SoftImputeImputer
from .neighbors import KNNImputer
from .simple import (
    INDICATOR_SUFFIX,
    FeedForwardImputer,
    GroupMeanImputer,
    IndicatorMeanImputer,
    MeanImputer,
    MedianImputer,
)

REGISTRY: dict[str, type[FittedImputer]] = {
    cls.method: cls
    for cls in (
        MeanImputer,
        MedianImputer,
        GroupMeanImputer,
        FeedForwardImputer,
        IndicatorMeanImputer,
        PPCAImputer,
        MFImputer,
        SoftImputeImputer,
        KNNImputer,
        MissForestImputer,
        MICEImputer,
        AEImputer,
    )
}
METHODS = tuple(REGISTRY)


def make_imputer(spec: ImputerSpec) -> FittedImputer:
    try:
        cls = REGISTRY[spec.method]
    except KeyError:
        raise ImputerError(f"unknown imputer {spec.method!r}; legal names: {', '.join(METHODS)}") from None
    return cls(dict(spec.params), seed=spec.seed)


def fit(spec: ImputerSpec, train: AlignedGrid) -> FittedImputer:
    return make_imputer(spec).fit(train)


def transform(imp: FittedImputer, grid: AlignedGrid) -> AlignedGrid:
    return imp.transform(grid)


__all__ = [
    "METHODS",
    "REGISTRY",
    "INDICATOR_SUFFIX",
    "FittedImputer",
    "ImputerError",
    "ImputerSpec",
    "fit",
    "transform",
    "make_imputer",
    "impute_quality",
    "load_imputer",
]
