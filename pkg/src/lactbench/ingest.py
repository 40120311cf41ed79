"""Raw eICU-shaped CSV extracts to a clean AlignedGrid.

The pipeline is: load events and stay statics, canonicalize feature names,
select the cohort, resample onto admission-anchored bins (last record wins)
and mask values outside each feature's valid range.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .datamodel import (
    DEFAULT_BIN_WIDTH,
    LACTATE,
    MISSING,
    AlignedGrid,
    EventRecord,
    FeatureTable,
    StayInfo,
)

log = logging.getLogger(__name__)

MAX_UNPARSEABLE_FRACTION = 0.5


class IngestError(RuntimeError):
    pass


@dataclass(frozen=True)
class CohortCriteria:
    min_age_years: float = 18
    min_lactate_count: int = 2
    min_los_minutes: float = 1080

    def __post_init__(self):
        for name in ("min_age_years", "min_lactate_count", "min_los_minutes"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def load(cls, path=None) -> "CohortCriteria":
        if path is None:
            text = resources.files("lactbench.data").joinpath("cohort_default.json").read_text()
        else:
            text = Path(path).read_text()
        return cls(**json.loads(text))


@dataclass(frozen=True)
class TableBinding:
    name: str
    file: str
    stay_col: str
    offset_col: str
    layout: str = "long"
    name_col: str | None = None
    value_col: str | None = None
    value_cols: tuple[str, ...] = ()
    patient_col: str | None = None

    def required_columns(self) -> list[str]:
        cols = [self.stay_col, self.offset_col]
        if self.layout == "long":
            cols += [self.name_col, self.value_col]
        else:
            cols += list(self.value_cols)
        if self.patient_col:
            cols.append(self.patient_col)
        return cols


@dataclass(frozen=True)
class PatientBinding:
    file: str
    stay_col: str
    patient_col: str | None = None
    age_col: str | None = None
    gender_col: str | None = None
    ethnicity_col: str | None = None
    weight_col: str | None = None
    dx_col: str | None = None
    los_col: str | None = None


@dataclass
class SchemaMap:
    """Column bindings per source table plus the source-name alias table."""

    patient: PatientBinding
    tables: dict[str, TableBinding]
    aliases: dict[str, str]

    @classmethod
    def from_json(cls, d: Mapping, features: FeatureTable) -> "SchemaMap":
        patient = PatientBinding(**d["patient"])
        tables = {}
        for name, t in d["tables"].items():
            t = dict(t)
            layout = t.get("layout", "long")
            if layout not in ("long", "wide"):
                raise ValueError(f"table {name}: layout must be long or wide")
            if layout == "long" and not (t.get("name_col") and t.get("value_col")):
                raise ValueError(f"table {name}: long layout needs name_col and value_col")
            if layout == "wide" and not t.get("value_cols"):
                raise ValueError(f"table {name}: wide layout needs value_cols")
            t["value_cols"] = tuple(t.get("value_cols", ()))
            tables[name] = TableBinding(name=name, **t)
        aliases = {}
        for spec in features:
            for src in (spec.name, *spec.aliases):
                aliases[src] = spec.name
        for src, canon in d.get("aliases", {}).items():
            if canon not in features:
                raise ValueError(f"alias {src!r} targets unknown feature {canon!r}")
            if aliases.get(src, canon) != canon:
                raise ValueError(f"alias {src!r} maps to both {aliases[src]!r} and {canon!r}")
            aliases[src] = canon
        return cls(patient, tables, aliases)

    @classmethod
    def load(cls, path=None, features: FeatureTable | None = None) -> "SchemaMap":
        features = features or FeatureTable.load()
        if path is None:
            text = resources.files("lactbench.data").joinpath("schema_eicu.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_json(json.loads(text), features)


@dataclass
class LoadReport:
    rows_read: int = 0
    rows_skipped: int = 0
    negative_offsets_dropped: int = 0
    per_table: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_skipped": self.rows_skipped,
            "negative_offsets_dropped": self.negative_offsets_dropped,
            "per_table": self.per_table,
        }


def _read_csv(path: Path, required: Sequence[str]) -> pd.DataFrame:
    if not path.exists():
        raise IngestError(f"missing file: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise IngestError(f"{path}: no header") from None
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise IngestError(f"{path}: header lacks bound column(s) {missing}")
    return df


def _binding_for(path: Path, schema: SchemaMap) -> TableBinding:
    for binding in schema.tables.values():
        if binding.file == path.name:
            return binding
    raise IngestError(f"{path}: no table binding for file name {path.name!r}")


def load_events(paths: Iterable, schema: SchemaMap, report: LoadReport | None = None) -> Iterator[EventRecord]:
    """Yield EventRecords from event-table CSVs in file order.

    Rows with an unparseable offset or value are skipped and counted.  A
    table where more than half of the rows naming a known feature are
    unparseable is rejected.  Rows with a negative offset (pre-admission)
    are dropped and counted separately.
    """
    report = report if report is not None else LoadReport()
    for p in paths:
        path = Path(p)
        binding = _binding_for(path, schema)
        df = _read_csv(path, binding.required_columns())
        counts = Counter()
        if binding.layout == "long":
            names = df[binding.name_col].to_numpy(dtype=object)
            raw_values = df[binding.value_col]
            frames = [(names, raw_values)]
        else:
            frames = [(np.full(len(df), col, dtype=object), df[col]) for col in binding.value_cols]
        stay = df[binding.stay_col].to_numpy(dtype=object)
        patient = df[binding.patient_col].to_numpy(dtype=object) if binding.patient_col else stay
        offset = pd.to_numeric(df[binding.offset_col], errors="coerce").to_numpy(dtype=float)
        records = []
        for names, raw in frames:
            value = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
            if binding.layout == "wide":
                # empty cells in wide tables mean "not charted", not a parse failure
                present = (raw.to_numpy(dtype=object) != "")
            else:
                present = np.ones(len(df), dtype=bool)
            known = np.array([n in schema.aliases for n in names], dtype=bool)
            ok = np.isfinite(value) & np.isfinite(offset)
            bad = present & ~ok
            counts["rows_read"] += int(present.sum())
            counts["rows_skipped"] += int(bad.sum())
            counts["known_rows"] += int((present & known).sum())
            counts["known_unparseable"] += int((bad & known).sum())
            neg = ok & (offset < 0)
            counts["negative_offsets_dropped"] += int(neg.sum())
            keep = np.flatnonzero(ok & ~neg)
            records.append((keep, names, value))
        if counts["known_rows"] and counts["known_unparseable"] > MAX_UNPARSEABLE_FRACTION * counts["known_rows"]:
            raise IngestError(
                f"{path}: {counts['known_unparseable']} of {counts['known_rows']} rows are unparseable"
            )
        report.rows_read += counts["rows_read"]
        report.rows_skipped += counts["rows_skipped"]
        report.negative_offsets_dropped += counts["negative_offsets_dropped"]
        report.per_table[binding.name] = dict(counts)
        if binding.layout == "wide":
            # interleave columns row by row to keep file order
            merged = sorted(
                ((int(i), k) for k, (keep, _, _) in enumerate(records) for i in keep)
            )
            for i, k in merged:
                _, names, value = records[k]
                yield EventRecord(str(patient[i]), str(stay[i]), str(names[i]), int(offset[i]), float(value[i]))
        else:
            keep, names, value = records[0]
            for i in keep:
                yield EventRecord(str(patient[i]), str(stay[i]), str(names[i]), int(offset[i]), float(value[i]))


def _parse_age(raw: str) -> float:
    raw = raw.strip()
    if not raw:
        return math.nan
    if raw.startswith(">"):
        # eICU censors ages above 89 as "> 89"
        return float(raw.lstrip("> ")) + 1
    try:
        return float(raw)
    except ValueError:
        return math.nan


def _to_float(raw: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        return math.nan


def load_static(path, schema: SchemaMap) -> dict[str, StayInfo]:
    """Stay descriptors keyed by stay id, in file order."""
    b = schema.patient
    required = [c for c in (b.stay_col, b.patient_col, b.age_col, b.gender_col, b.ethnicity_col,
                            b.weight_col, b.dx_col, b.los_col) if c]
    df = _read_csv(Path(path), required)

    def col(name):
        return df[name].tolist() if name else [""] * len(df)

    out: dict[str, StayInfo] = {}
    for sid, pid, age, g, e, w, dx, los in zip(
        col(b.stay_col), col(b.patient_col) if b.patient_col else col(b.stay_col), col(b.age_col),
        col(b.gender_col), col(b.ethnicity_col), col(b.weight_col), col(b.dx_col), col(b.los_col),
    ):
        out[str(sid)] = StayInfo(
            patient_id=str(pid),
            stay_id=str(sid),
            age=_parse_age(age),
            gender=g,
            ethnicity=e,
            admission_weight=_to_float(w),
            admission_dx=dx,
            los_minutes=_to_float(los),
        )
    return out


def canonicalize(events: Iterable[EventRecord], schema: SchemaMap | FeatureTable,
                 dropped: Counter | None = None) -> Iterator[EventRecord]:
    """Rename source features to canonical names; unknown names are dropped and counted."""
    resolve = schema.aliases.get if isinstance(schema, SchemaMap) else schema.resolve
    for ev in events:
        canon = resolve(ev.feature)
        if canon is None:
            if dropped is not None:
                dropped[ev.feature] += 1
            continue
        yield ev if canon == ev.feature else EventRecord(ev.patient_id, ev.stay_id, canon, ev.offset_minutes, ev.value)


@dataclass
class CohortResult:
    retained: list[str]
    excluded: dict[str, int]
    n_candidates: int

    def to_json(self) -> dict:
        return {"n_candidates": self.n_candidates, "n_retained": len(self.retained), "excluded": self.excluded}


def select_cohort(events: Iterable[EventRecord], criteria: CohortCriteria, static: Mapping[str, StayInfo],
                  features: FeatureTable | None = None) -> CohortResult:
    """Apply the inclusion rule: age > min, >= min valid lactates, LoS >= min.

    ``events`` must carry canonical names.  A lactate event counts as valid
    when it lies in the lactate valid range of ``features`` (any finite
    positive value when no table is given).  Exclusion counts are per
    criterion, so a stay failing two criteria is counted twice.
    """
    lo, hi = 0.0, math.inf
    if features is not None and LACTATE in features:
        lo, hi = features[LACTATE].valid_min, features[LACTATE].valid_max
    lactate_counts: Counter = Counter()
    seen = set()
    for ev in events:
        if ev.stay_id not in static:
            raise IngestError(f"stay {ev.stay_id!r} is missing from the static table")
        seen.add(ev.stay_id)
        if ev.feature == LACTATE and ev.value > 0 and lo <= ev.value <= hi:
            lactate_counts[ev.stay_id] += 1
    excluded = Counter({"age": 0, "lactate_count": 0, "los": 0})
    retained = []
    for sid, info in static.items():
        ok_age = info.age > criteria.min_age_years
        ok_lac = lactate_counts[sid] >= criteria.min_lactate_count
        ok_los = info.los_minutes >= criteria.min_los_minutes
        excluded["age"] += not ok_age
        excluded["lactate_count"] += not ok_lac
        excluded["los"] += not ok_los
        if ok_age and ok_lac and ok_los:
            retained.append(sid)
    return CohortResult(retained, dict(excluded), len(static))


def resample(events: Iterable[EventRecord], bin_width_minutes: int = DEFAULT_BIN_WIDTH,
             stays: Sequence[StayInfo] | None = None, features: Sequence[str] | None = None) -> AlignedGrid:
    """Bin events onto ``[b*w, (b+1)*w)`` windows per stay; the last record wins.

    Ties at identical offsets go to the later record in input order.  Each
    stay spans bin 0 through its last populated bin.  ``stays`` and
    ``features`` fix row-group and column order; by default both follow
    first appearance.  Events for stays or features outside those lists are
    ignored.
    """
    events = list(events)
    if stays is None:
        order: dict[str, StayInfo] = {}
        for ev in events:
            order.setdefault(ev.stay_id, StayInfo(ev.patient_id, ev.stay_id))
        stays = list(order.values())
    if features is None:
        features = list(dict.fromkeys(ev.feature for ev in events))
    stay_pos = {s.stay_id: i for i, s in enumerate(stays)}
    feat_pos = {f: j for j, f in enumerate(features)}
    rows = [(stay_pos[e.stay_id], feat_pos[e.feature], e.offset_minutes, e.value, k)
            for k, e in enumerate(events) if e.stay_id in stay_pos and e.feature in feat_pos]
    n_stays, n_feat = len(stays), len(features)
    if rows:
        arr = np.array([r[:3] for r in rows], dtype=np.int64)
        vals = np.array([r[3] for r in rows], dtype=float)
        seq = np.array([r[4] for r in rows], dtype=np.int64)
        s_idx, f_idx, off = arr[:, 0], arr[:, 1], arr[:, 2]
        if np.any(off < 0):
            raise ValueError("resample requires non-negative offsets")
        b_idx = off // bin_width_minutes
    else:
        s_idx = f_idx = b_idx = off = seq = np.empty(0, np.int64)
        vals = np.empty(0)
    lengths = np.zeros(n_stays, dtype=np.int64)
    np.maximum.at(lengths, s_idx, b_idx + 1)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    values = np.full((int(offsets[-1]), n_feat), MISSING)
    mask = np.zeros(values.shape, dtype=bool)
    if len(vals):
        order = np.lexsort((seq, off, b_idx, f_idx, s_idx))
        row = (offsets[s_idx] + b_idx)[order]
        col = f_idx[order]
        last = np.ones(len(order), dtype=bool)
        last[:-1] = (row[1:] != row[:-1]) | (col[1:] != col[:-1])
        values[row[last], col[last]] = vals[order][last]
        mask[row[last], col[last]] = True
    return AlignedGrid(stays, features, values, mask, offsets, bin_width_minutes)


def mask_outliers(grid: AlignedGrid, features: FeatureTable) -> tuple[AlignedGrid, dict[str, int]]:
    """Mark observed values outside ``[valid_min, valid_max]`` as missing."""
    values = grid.values.copy()
    mask = grid.mask.copy()
    counts = {}
    for j, name in enumerate(grid.features):
        if name not in features:
            raise IngestError(f"feature {name!r} has no entry in the feature table")
        spec = features[name]
        if spec.kind != "numeric":
            continue
        col = values[:, j]
        bad = mask[:, j] & ((col < spec.valid_min) | (col > spec.valid_max))
        counts[name] = int(bad.sum())
        values[bad, j] = MISSING
        mask[bad, j] = False
    return grid.with_arrays(values, mask), counts


def observed_percentage(grid: AlignedGrid) -> list[dict]:
    """Per-feature share of observed cells (data behind an observed-percentage bar chart)."""
    n = grid.n_rows
    out = []
    for j, f in enumerate(grid.features):
        k = int(grid.mask[:, j].sum())
        out.append({"feature": f, "n_observed": k, "n_cells": n, "percent": 100.0 * k / n if n else 0.0})
    return out


def lactate_correlations(grid: AlignedGrid) -> list[dict]:
    """Pearson correlation of each feature with lactate over co-observed cells."""
    j_lac = grid.feature_index(LACTATE)
    out = []
    for j, f in enumerate(grid.features):
        both = grid.mask[:, j] & grid.mask[:, j_lac]
        n = int(both.sum())
        r = math.nan
        if n >= 3:
            x, y = grid.values[both, j], grid.values[both, j_lac]
            if x.std() > 0 and y.std() > 0:
                r = float(np.corrcoef(x, y)[0, 1])
        out.append({"feature": f, "n_pairs": n, "pearson_r": r})
    return out


@dataclass
class IngestResult:
    grid: AlignedGrid
    report: dict


def run_ingest(data_dir, schema: SchemaMap, criteria: CohortCriteria, features: FeatureTable,
               bin_width_minutes: int = DEFAULT_BIN_WIDTH) -> IngestResult:
    """Full preparation pipeline over a directory of source-table CSVs."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise IngestError(f"not a directory: {data_dir}")
    static = load_static(data_dir / schema.patient.file, schema)
    load_report = LoadReport()
    paths = [data_dir / b.file for b in schema.tables.values()]
    dropped: Counter = Counter()
    events = list(canonicalize(load_events(paths, schema, load_report), schema, dropped))
    cohort = select_cohort(events, criteria, static, features)
    keep = set(cohort.retained)
    events = [e for e in events if e.stay_id in keep]
    present = {e.feature for e in events}
    feats = [f for f in features.numeric_names if f in present]
    absent = [f for f in features.numeric_names if f not in present]
    stays = [static[s] for s in cohort.retained]
    grid = resample(events, bin_width_minutes, stays=stays, features=feats)
    grid, outliers = mask_outliers(grid, features)
    report = {
        "load": load_report.to_json(),
        "unknown_features_dropped": dict(sorted(dropped.items())),
        "cohort": cohort.to_json(),
        "features_absent_from_cohort": absent,
        "outliers_masked": outliers,
        "n_stays": grid.n_stays,
        "n_bins": grid.n_rows,
    }
    log.info("ingested %d stays, %d bins, %d features", grid.n_stays, grid.n_rows, len(feats))
    return IngestResult(grid, report)
