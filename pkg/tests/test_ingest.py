import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import resample_ref
from lactbench.datamodel import EventRecord, FeatureTable, StayInfo
from lactbench.ingest import (
    CohortCriteria,
    IngestError,
    LoadReport,
    SchemaMap,
    canonicalize,
    lactate_correlations,
    load_events,
    mask_outliers,
    observed_percentage,
    resample,
    run_ingest,
    select_cohort,
)

FEATURES = FeatureTable.load()


def lab_schema(extra_tables=None):
    d = {
        "patient": {"file": "patient.csv", "stay_col": "stay"},
        "tables": {"lab": {"file": "lab.csv", "stay_col": "stay", "offset_col": "offset",
                           "name_col": "name", "value_col": "value"}},
    }
    d["tables"].update(extra_tables or {})
    return SchemaMap.from_json(d, FEATURES)


def ev(stay, feature, offset, value, patient=None):
    return EventRecord(patient or stay, stay, feature, offset, value)


# -- load_events ------------------------------------------------------------------


def test_load_events_skips_unparseable_value(tmp_path):
    (tmp_path / "lab.csv").write_text("stay,offset,name,value\n1,5,lactate,2.0\n1,10,lactate,abc\n1,20,lactate,3.5\n")
    rep = LoadReport()
    out = list(load_events([tmp_path / "lab.csv"], lab_schema(), rep))
    assert [e.value for e in out] == [2.0, 3.5]
    assert rep.rows_skipped == 1 and rep.rows_read == 3


def test_load_events_empty_file(tmp_path):
    (tmp_path / "lab.csv").write_text("stay,offset,name,value\n")
    rep = LoadReport()
    assert list(load_events([tmp_path / "lab.csv"], lab_schema(), rep)) == []
    assert rep.rows_read == 0 and rep.rows_skipped == 0


def test_load_events_missing_offset_column(tmp_path):
    (tmp_path / "lab.csv").write_text("stay,name,value\n1,lactate,2.0\n")
    with pytest.raises(IngestError, match="offset"):
        list(load_events([tmp_path / "lab.csv"], lab_schema()))


def test_load_events_rejects_mostly_garbage(tmp_path):
    (tmp_path / "lab.csv").write_text("stay,offset,name,value\n1,5,lactate,x\n1,6,lactate,y\n1,7,lactate,1\n")
    with pytest.raises(IngestError, match="unparseable"):
        list(load_events([tmp_path / "lab.csv"], lab_schema()))


def test_load_events_drops_negative_offsets(tmp_path):
    (tmp_path / "lab.csv").write_text("stay,offset,name,value\n1,-30,lactate,2.0\n1,30,lactate,2.5\n")
    rep = LoadReport()
    out = list(load_events([tmp_path / "lab.csv"], lab_schema(), rep))
    assert [e.offset_minutes for e in out] == [30]
    assert rep.negative_offsets_dropped == 1


def test_load_events_wide_layout_keeps_row_order(tmp_path):
    schema = lab_schema({"vital": {"file": "vital.csv", "layout": "wide", "stay_col": "stay",
                                   "offset_col": "offset", "value_cols": ["heartrate", "sao2"]}})
    (tmp_path / "vital.csv").write_text("stay,offset,heartrate,sao2\n1,5,80,97\n1,65,,96\n")
    out = list(load_events([tmp_path / "vital.csv"], schema))
    assert [(e.feature, e.offset_minutes, e.value) for e in out] == [
        ("heartrate", 5, 80.0), ("sao2", 5, 97.0), ("sao2", 65, 96.0)]


# -- canonicalize --------------------------------------------------------------------


def test_canonicalize_merges_sources_and_drops_unknown():
    schema = lab_schema()
    events = [ev("1", "Respiratory Rate", 0, 20.0), ev("1", "respiration", 5, 22.0),
              ev("1", "foo", 5, 1.0), ev("1", "lactate", 6, 2.0)]
    dropped = Counter()
    out = list(canonicalize(events, schema, dropped))
    assert [e.feature for e in out] == ["respiratory_rate", "respiratory_rate", "lactate"]
    assert out[2] is events[3]
    assert dropped == {"foo": 1}


# -- select_cohort -------------------------------------------------------------------


def stay(sid, age, los):
    return StayInfo(f"p{sid}", sid, age=age, los_minutes=los)


def test_cohort_table1_typical_stay_retained():
    static = {"a": stay("a", 61.8, 6.8 * 1440)}
    events = [ev("a", "lactate", t, 2.0) for t in (0, 100, 200)]
    res = select_cohort(events, CohortCriteria(), static, FEATURES)
    assert res.retained == ["a"]


def test_cohort_boundaries():
    static = {"age18": stay("age18", 18, 2000), "one_lac": stay("one_lac", 50, 2000),
              "los18h": stay("los18h", 50, 1080), "short": stay("short", 50, 1079)}
    events = [ev(s, "lactate", t, 2.0) for s in static for t in (0, 60)]
    events = [e for e in events if not (e.stay_id == "one_lac" and e.offset_minutes == 60)]
    res = select_cohort(events, CohortCriteria(), static, FEATURES)
    assert res.retained == ["los18h"]
    assert res.excluded == {"age": 1, "lactate_count": 1, "los": 1}


def test_cohort_ignores_out_of_range_lactate():
    static = {"a": stay("a", 50, 2000)}
    events = [ev("a", "lactate", 0, 2.0), ev("a", "lactate", 60, 45.0)]
    assert select_cohort(events, CohortCriteria(), static, FEATURES).retained == []


def test_cohort_unknown_stay_is_error():
    with pytest.raises(IngestError):
        select_cohort([ev("zz", "lactate", 0, 1.0)], CohortCriteria(), {}, FEATURES)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcd"), st.integers(0, 3), st.floats(0.05, 40)), max_size=30),
       st.randoms(use_true_random=False))
def test_cohort_invariant_to_event_order(rows, rnd):
    static = {s: stay(s, a, l) for s, a, l in zip("abcd", (17, 30, 50, 80), (2000, 500, 1500, 1080))}
    feats = ["lactate", "heart_rate", "lactate", "spo2"]
    events = [ev(s, feats[f], k, v) for k, (s, f, v) in enumerate(rows)]
    shuffled = list(events)
    rnd.shuffle(shuffled)
    a = select_cohort(events, CohortCriteria(), static, FEATURES)
    b = select_cohort(shuffled, CohortCriteria(), static, FEATURES)
    assert set(a.retained) == set(b.retained) and a.excluded == b.excluded


# -- resample -------------------------------------------------------------------------


def test_resample_last_record_wins():
    g = resample([ev("s", "lactate", 100, 3.0), ev("s", "lactate", 10, 1.0)], 120)
    assert g.values[0, 0] == 3.0 and g.n_rows == 1


def test_resample_half_open_bins():
    g = resample([ev("s", "lactate", 119, 1.0), ev("s", "lactate", 120, 2.0)], 120)
    assert g.values[:, 0].tolist() == [1.0, 2.0]


def test_resample_equal_offsets_later_record_wins():
    g = resample([ev("s", "lactate", 50, 1.0), ev("s", "lactate", 50, 2.0)], 120)
    assert g.values[0, 0] == 2.0


def test_resample_feature_without_events_is_unobserved():
    g = resample([ev("s", "lactate", 0, 1.0), ev("s", "lactate", 300, 1.0)], 120, features=["lactate", "spo2"])
    assert not g.mask[:, 1].any()
    assert np.isnan(g.values[:, 1]).all()


event_streams = st.lists(
    st.tuples(st.sampled_from(["s1", "s2", "s3"]), st.sampled_from(["lactate", "heart_rate"]),
              st.integers(0, 1000), st.floats(-50, 50, allow_nan=False)),
    max_size=60,
)


@settings(max_examples=60, deadline=None)
@given(event_streams, st.sampled_from([60, 120, 119]))
def test_resample_matches_brute_force(rows, width):
    events = [ev(s, f, o, v) for s, f, o, v in rows]
    stays = [StayInfo(s, s) for s in ("s1", "s2", "s3")]
    feats = ["lactate", "heart_rate"]
    g = resample(events, width, stays=stays, features=feats)
    ref = resample_ref(events, width, [s.stay_id for s in stays], feats)
    for i, s in enumerate(stays):
        n_bins, cells = ref[s.stay_id]
        assert g.lengths()[i] == n_bins
        block, mask = g.values[g.stay_slice(i)], g.mask[g.stay_slice(i)]
        for b in range(n_bins):
            for j, f in enumerate(feats):
                if (f, b) in cells:
                    assert mask[b, j] and block[b, j] == cells[(f, b)]
                else:
                    assert not mask[b, j]


@settings(max_examples=40, deadline=None)
@given(event_streams)
def test_resample_idempotent_on_binned_events(rows):
    events = [ev(s, f, o, v) for s, f, o, v in rows]
    g = resample(events, 120)
    again = []
    for i, s in enumerate(g.stays):
        sl = g.stay_slice(i)
        for b, (vals, obs) in enumerate(zip(g.values[sl], g.mask[sl])):
            for j, f in enumerate(g.features):
                if obs[j]:
                    again.append(ev(s.stay_id, f, b * 120 + 7, vals[j]))
    g2 = resample(again, 120, stays=g.stays, features=g.features)
    keep = [i for i, n in enumerate(g.lengths()) if n]
    # trailing empty bins cannot be re-synthesized, so compare observed cells
    for i in keep:
        a, b = g.stay_slice(i), g2.stay_slice(i)
        n = g2.lengths()[i]
        np.testing.assert_array_equal(g.mask[a][:n], g2.mask[b])
        assert np.array_equal(g.values[a][:n], g2.values[b], equal_nan=True)
        assert not g.mask[a][n:].any()


# -- mask_outliers --------------------------------------------------------------------


def test_mask_outliers_examples():
    g = resample([ev("s", "lactate", 0, 45.0), ev("s", "lactate", 120, 30.0), ev("s", "lactate", 240, 0.1)], 120)
    out, counts = mask_outliers(g, FEATURES)
    assert out.mask[:, 0].tolist() == [False, True, True]
    assert counts == {"lactate": 1}


def test_mask_outliers_identity_when_in_range():
    g = resample([ev("s", "lactate", 0, 2.0), ev("s", "heart_rate", 0, 80.0)], 120)
    out, counts = mask_outliers(g, FEATURES)
    assert np.array_equal(out.values, g.values, equal_nan=True)
    assert sum(counts.values()) == 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 600), st.floats(-10, 400, allow_nan=False),
                          st.sampled_from(["lactate", "heart_rate", "spo2"])), min_size=1, max_size=30))
def test_mask_outliers_only_removes(rows):
    g = resample([ev("s", f, o, v) for o, v, f in rows], 120)
    out, _ = mask_outliers(g, FEATURES)
    assert not np.any(out.mask & ~g.mask)
    kept = out.mask
    np.testing.assert_array_equal(out.values[kept], g.values[kept])


# -- full pipeline on the shipped fixture ------------------------------------------------


def test_run_ingest_toy_fixture(toy_dir):
    expected = json.loads((toy_dir / "expected.json").read_text())
    schema = SchemaMap.load(toy_dir / "schema.json", FEATURES)
    res = run_ingest(toy_dir / "data", schema, CohortCriteria(), FEATURES)
    g = res.grid
    assert list(g.stay_ids) == expected["stays"]
    assert list(g.features) == expected["features"]
    assert g.offsets.tolist() == expected["offsets"]
    want = np.array([[math.nan if v is None else v for v in row] for row in expected["values"]])
    assert np.array_equal(g.values, want, equal_nan=True)
    np.testing.assert_array_equal(g.mask, np.isfinite(want))
    assert res.report["cohort"]["excluded"] == expected["excluded"]
    assert res.report["outliers_masked"] == expected["outliers_masked"]
    assert res.report["unknown_features_dropped"] == expected["unknown_features_dropped"]


def test_observed_percentage_and_correlation(toy_dir):
    schema = SchemaMap.load(toy_dir / "schema.json", FEATURES)
    g = run_ingest(toy_dir / "data", schema, CohortCriteria(), FEATURES).grid
    pct = {r["feature"]: r["percent"] for r in observed_percentage(g)}
    assert pct["lactate"] == pytest.approx(400 / 6)
    corr = {r["feature"]: r for r in lactate_correlations(g)}
    assert corr["lactate"]["pearson_r"] == pytest.approx(1.0)
    assert math.isnan(corr["spo2"]["pearson_r"])
