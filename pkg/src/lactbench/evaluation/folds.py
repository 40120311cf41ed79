"""Stay-level k-fold assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FoldAssignment:
    folds: int
    fold_of: dict

    def test_ids(self, k: int) -> list:
        return [s for s, f in self.fold_of.items() if f == k]

    def sizes(self) -> list:
        return [sum(1 for f in self.fold_of.values() if f == k) for k in range(self.folds)]


def kfold(ids, folds: int, seed: int) -> FoldAssignment:
    """Shuffle ``ids`` with the seed, then deal them round-robin into ``folds`` folds.

    Fold sizes differ by at most one; the first ``len(ids) % folds`` folds
    take the extra element.
    """
    ids = list(ids)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if len(ids) < folds:
        raise ValueError(f"{len(ids)} units cannot fill {folds} folds")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return FoldAssignment(folds, {ids[p]: i % folds for i, p in enumerate(perm)})
