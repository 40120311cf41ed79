import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lactbench.datamodel import LACTATE, AlignedGrid, StayInfo  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def grid_from_matrix(X, M=None, stay_lengths=None, features=None, truth=None):
    """Wrap a plain matrix as a grid; by default every row is its own stay."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if M is None:
        M = np.isfinite(X)
    M = np.asarray(M, dtype=bool)
    lengths = [1] * n if stay_lengths is None else list(stay_lengths)
    assert sum(lengths) == n
    stays = [StayInfo(f"P{i}", f"S{i}") for i in range(len(lengths))]
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    feats = features or [LACTATE] + [f"f{j}" for j in range(1, p)]
    return AlignedGrid(stays, feats, np.where(M, X, np.nan), M, offsets, truth=truth)


def random_grid(rng, n_rows=30, n_feat=15, miss=0.3, n_stays=None):
    """Positive-valued grid with MCAR holes; every column keeps one observation."""
    X = rng.gamma(2.0, 1.5, (n_rows, n_feat)) + 0.2
    M = rng.random((n_rows, n_feat)) >= miss
    M[rng.integers(0, n_rows, n_feat), np.arange(n_feat)] = True
    if n_stays is None:
        n_stays = max(1, n_rows // 5)
    cuts = np.sort(rng.choice(np.arange(1, n_rows), n_stays - 1, replace=False)) if n_stays > 1 else []
    lengths = np.diff(np.concatenate([[0], cuts, [n_rows]])).astype(int)
    return grid_from_matrix(X, M, lengths)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_dir():
    return FIXTURES / "toy_icu"


# one summary line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
