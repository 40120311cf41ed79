import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grid_from_matrix
from oracles import band_ref
from lactbench.datamodel import (
    AlignedGrid,
    DomainError,
    FeatureTable,
    SeverityCategory,
    StaticEncoder,
    StayInfo,
    TaskParams,
    categorize_lactate,
    categorize_lactate_array,
)
from lactbench.interchange import load_grid, save_grid


@pytest.mark.parametrize(
    "value, band",
    [(1.50, "NORMAL"), (2.00, "NORMAL"), (2.01, "MILD"), (4.0, "MILD"), (4.01, "MODERATE"),
     (6.0, "MODERATE"), (6.005, "SEVERE"), (6.01, "SEVERE"), (25.0, "SEVERE"), (1e-9, "NORMAL")],
)
def test_severity_band_edges(value, band):
    assert categorize_lactate(value) is SeverityCategory[band]


@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
def test_severity_rejects_non_positive(bad):
    with pytest.raises(DomainError):
        categorize_lactate(bad)


@given(st.floats(min_value=1e-6, max_value=1e4), st.floats(min_value=1e-6, max_value=1e4))
def test_severity_monotone_and_total(a, b):
    lo, hi = sorted((a, b))
    assert categorize_lactate(lo) <= categorize_lactate(hi)
    assert categorize_lactate(a) == band_ref(a)


@given(st.lists(st.floats(min_value=1e-6, max_value=100), min_size=1, max_size=40))
def test_vectorized_band_matches_scalar(vals):
    assert categorize_lactate_array(np.array(vals)).tolist() == [band_ref(v) for v in vals]


def test_vectorized_band_marks_invalid():
    assert categorize_lactate_array(np.array([np.nan, 0.0, -2.0, 3.0])).tolist() == [-1, -1, -1, 1]


def test_grid_arrays_are_read_only(rng):
    g = grid_from_matrix(rng.random((4, 3)))
    with pytest.raises(ValueError):
        g.values[0, 0] = 1.0
    with pytest.raises(ValueError):
        g.mask[0, 0] = False


def test_grid_rejects_bad_offsets():
    with pytest.raises(ValueError):
        AlignedGrid([StayInfo("p", "s")], ["lactate"], np.ones((3, 1)), np.ones((3, 1), bool), [0, 2])


def test_grid_stay_views():
    X = np.arange(12.0).reshape(6, 2)
    g = grid_from_matrix(X, stay_lengths=[2, 4])
    assert g.n_stays == 2 and g.n_rows == 6
    assert g.lengths().tolist() == [2, 4]
    np.testing.assert_array_equal(g.stay_values(1), X[2:].T)
    assert g.row_bin_index().tolist() == [0, 1, 0, 1, 2, 3]
    sub = g.select_stays([1])
    np.testing.assert_array_equal(sub.values, X[2:])
    assert sub.offsets.tolist() == [0, 4]


def test_task_params_bins():
    t = TaskParams()
    assert t.history_bins(120) == 3 and t.horizon_bins(120) == 1
    with pytest.raises(ValueError):
        TaskParams(alpha_minutes=100).history_bins(120)


def test_feature_table_aliases():
    ft = FeatureTable.load()
    assert ft.resolve("Heart Rate") == "heart_rate"
    assert ft.resolve("heart_rate") == "heart_rate"
    assert ft.resolve("foo") is None
    assert ft["lactate"].valid_min == 0.1 and ft["lactate"].valid_max == 30


def test_static_encoder_one_hot():
    stays = [StayInfo("p1", "a", age=50, gender="F", admission_dx="x", admission_weight=70),
             StayInfo("p2", "b", age=math.nan, gender="M", admission_dx="y", admission_weight=90),
             StayInfo("p3", "c", age=70, gender="F", admission_dx="x", admission_weight=math.nan)]
    enc = StaticEncoder(max_dx=1).fit(stays)
    Z = enc.transform(stays)
    assert enc.names[-2:] == ["dx=x", "dx=other"]
    assert Z[1, 0] == 60.0  # mean-filled age
    assert Z[2, 1] == 80.0
    np.testing.assert_array_equal(Z[:, -2:], [[1, 0], [0, 1], [1, 0]])


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, width=64)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_grid_round_trip_bit_exact(tmp_path_factory, data):
    lengths = data.draw(st.lists(st.integers(0, 4), min_size=1, max_size=4))
    n = sum(lengths)
    p = data.draw(st.integers(1, 3))
    vals = np.array(data.draw(st.lists(finite, min_size=n * p, max_size=n * p)), dtype=float).reshape(n, p)
    mask = np.array(data.draw(st.lists(st.booleans(), min_size=n * p, max_size=n * p)), dtype=bool).reshape(n, p)
    stays = [StayInfo(f"p{i}", f"s,{i}", age=40.5 + i, gender="F", los_minutes=1200.0)
             for i in range(len(lengths))]
    g = AlignedGrid(stays, [f"x{j}" for j in range(p)], np.where(mask, vals, np.nan), mask,
                    np.concatenate([[0], np.cumsum(lengths)]), truth=vals, provenance_mask=~mask)
    d = tmp_path_factory.mktemp("rt")
    save_grid(g, d)
    back, _ = load_grid(d)
    assert back.stays == g.stays
    assert back.features == g.features
    np.testing.assert_array_equal(back.offsets, g.offsets)
    np.testing.assert_array_equal(back.mask, g.mask)
    assert np.array_equal(back.values, g.values, equal_nan=True)
    assert np.array_equal(back.truth, g.truth)
    np.testing.assert_array_equal(back.provenance_mask, g.provenance_mask)
