"""Core domain types: events, aligned grids, severity bands and feature metadata."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

MISSING = np.nan
DEFAULT_BIN_WIDTH = 120
LACTATE = "lactate"


class DomainError(ValueError):
    pass


class SeverityCategory(enum.IntEnum):
    NORMAL = 0
    MILD = 1
    MODERATE = 2
    SEVERE = 3


# Upper (inclusive) edges in mmol/L; SEVERE is everything above the last one.
SEVERITY_EDGES = (2.0, 4.0, 6.0)


def categorize_lactate(value: float) -> SeverityCategory:
    """Map a lactate concentration (mmol/L) to its severity band.

    Bands are left-open, right-closed: (0, 2], (2, 4], (4, 6], (6, inf).
    """
    v = float(value)
    if not math.isfinite(v) or v <= 0:
        raise DomainError(f"lactate must be finite and positive, got {value!r}")
    for cat, edge in zip(SeverityCategory, SEVERITY_EDGES):
        if v <= edge:
            return cat
    return SeverityCategory.SEVERE


def categorize_lactate_array(values: np.ndarray) -> np.ndarray:
    """Vectorized :func:`categorize_lactate`; non-positive or NaN entries map to -1."""
    values = np.asarray(values, dtype=float)
    cats = np.searchsorted(np.asarray(SEVERITY_EDGES), values, side="left").astype(np.int64)
    cats[~np.isfinite(values) | (values <= 0)] = -1
    return cats


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    aliases: tuple[str, ...] = ()
    valid_min: float = -math.inf
    valid_max: float = math.inf
    kind: str = "numeric"
    unit: str = ""

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"{self.name}: kind must be numeric or categorical")
        if self.kind == "numeric" and not self.valid_min < self.valid_max:
            raise ValueError(f"{self.name}: valid_min must be < valid_max")


class FeatureTable:
    """Ordered feature dictionary with alias resolution.

    Canonical names are unique and every alias resolves to exactly one
    canonical name.  A canonical name always resolves to itself.
    """

    def __init__(self, specs: Iterable[FeatureSpec]):
        self.specs: dict[str, FeatureSpec] = {}
        self._alias: dict[str, str] = {}
        for spec in specs:
            if spec.name in self.specs:
                raise ValueError(f"duplicate canonical feature {spec.name!r}")
            self.specs[spec.name] = spec
        for spec in self.specs.values():
            for name in (spec.name, *spec.aliases):
                owner = self._alias.get(name)
                if owner is not None and owner != spec.name:
                    raise ValueError(f"alias {name!r} maps to both {owner!r} and {spec.name!r}")
                self._alias[name] = spec.name

    def __contains__(self, name: str) -> bool:
        return name in self.specs

    def __getitem__(self, name: str) -> FeatureSpec:
        return self.specs[name]

    def __iter__(self):
        return iter(self.specs.values())

    def __len__(self) -> int:
        return len(self.specs)

    @property
    def numeric_names(self) -> list[str]:
        return [s.name for s in self.specs.values() if s.kind == "numeric"]

    def resolve(self, source_name: str) -> str | None:
        return self._alias.get(source_name)

    def subset(self, names: Sequence[str]) -> "FeatureTable":
        return FeatureTable(self.specs[n] for n in names)

    def to_json(self) -> list[dict]:
        return [
            {
                "name": s.name,
                "aliases": list(s.aliases),
                "valid_min": _json_float(s.valid_min),
                "valid_max": _json_float(s.valid_max),
                "kind": s.kind,
                "unit": s.unit,
            }
            for s in self.specs.values()
        ]

    @classmethod
    def from_json(cls, items: Sequence[Mapping]) -> "FeatureTable":
        specs = []
        for item in items:
            specs.append(
                FeatureSpec(
                    name=item["name"],
                    aliases=tuple(item.get("aliases", ())),
                    valid_min=_parse_float(item.get("valid_min", -math.inf)),
                    valid_max=_parse_float(item.get("valid_max", math.inf)),
                    kind=item.get("kind", "numeric"),
                    unit=item.get("unit", ""),
                )
            )
        return cls(specs)

    @classmethod
    def load(cls, path=None) -> "FeatureTable":
        """Load a feature dictionary JSON; ``None`` loads the shipped default."""
        if path is None:
            text = resources.files("lactbench.data").joinpath("features.json").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        return cls.from_json(json.loads(text)["features"])


def _json_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _parse_float(x) -> float:
    return float(x)


@dataclass(frozen=True)
class EventRecord:
    patient_id: str
    stay_id: str
    feature: str
    offset_minutes: int
    value: float


@dataclass(frozen=True)
class StayInfo:
    """Stay descriptor with its static (admission-time) features."""

    patient_id: str
    stay_id: str
    age: float = math.nan
    gender: str = ""
    ethnicity: str = ""
    admission_weight: float = math.nan
    admission_dx: str = ""
    los_minutes: float = math.nan

    def to_json(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "stay_id": self.stay_id,
            "age": _nan_to_none(self.age),
            "gender": self.gender,
            "ethnicity": self.ethnicity,
            "admission_weight": _nan_to_none(self.admission_weight),
            "admission_dx": self.admission_dx,
            "los_minutes": _nan_to_none(self.los_minutes),
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "StayInfo":
        return cls(
            patient_id=str(d["patient_id"]),
            stay_id=str(d["stay_id"]),
            age=_none_to_nan(d.get("age")),
            gender=d.get("gender", "") or "",
            ethnicity=d.get("ethnicity", "") or "",
            admission_weight=_none_to_nan(d.get("admission_weight")),
            admission_dx=d.get("admission_dx", "") or "",
            los_minutes=_none_to_nan(d.get("los_minutes")),
        )


def _nan_to_none(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def _none_to_nan(x) -> float:
    return math.nan if x is None else float(x)


@dataclass(frozen=True)
class TaskParams:
    alpha_minutes: int = 360
    beta_minutes: int = 120

    def validate(self, bin_width_minutes: int) -> None:
        for name in ("alpha_minutes", "beta_minutes"):
            v = getattr(self, name)
            if v <= 0 or v % bin_width_minutes:
                raise ValueError(f"{name}={v} must be a positive multiple of {bin_width_minutes}")

    def history_bins(self, bin_width_minutes: int) -> int:
        self.validate(bin_width_minutes)
        return self.alpha_minutes // bin_width_minutes

    def horizon_bins(self, bin_width_minutes: int) -> int:
        self.validate(bin_width_minutes)
        return self.beta_minutes // bin_width_minutes


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AlignedGrid:
    """Stay-major grid of binned feature values with an observation mask.

    Storage is row-flattened: ``values[offsets[i]:offsets[i + 1]]`` is the
    ``bins x features`` block of stay ``i``; :meth:`stay_values` returns the
    ``features x bins`` view.  Unobserved entries hold ``MISSING`` (NaN).
    ``truth`` optionally carries pre-corruption values for imputation scoring,
    and ``provenance_mask`` the mask as it stood before imputation.
    """

    stays: tuple[StayInfo, ...]
    features: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray
    offsets: np.ndarray
    bin_width_minutes: int = DEFAULT_BIN_WIDTH
    truth: np.ndarray | None = None
    provenance_mask: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        offsets = np.asarray(self.offsets, dtype=np.int64)
        if values.ndim != 2 or values.shape != mask.shape:
            raise ValueError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        if values.shape[1] != len(self.features):
            raise ValueError("column count does not match feature list")
        if len(offsets) != len(self.stays) + 1 or offsets[0] != 0 or offsets[-1] != len(values):
            raise ValueError("offsets must delimit every stay block")
        if np.any(np.diff(offsets) < 0):
            raise ValueError("offsets must be non-decreasing")
        if len(set(self.features)) != len(self.features):
            raise ValueError("duplicate feature names")
        object.__setattr__(self, "stays", tuple(self.stays))
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "mask", _readonly(mask))
        object.__setattr__(self, "offsets", _readonly(offsets))
        for name in ("truth", "provenance_mask"):
            extra = getattr(self, name)
            if extra is not None:
                extra = np.asarray(extra, dtype=bool if name == "provenance_mask" else np.float64)
                if extra.shape != values.shape:
                    raise ValueError(f"{name} shape {extra.shape} != {values.shape}")
                object.__setattr__(self, name, _readonly(extra))

    @classmethod
    def from_blocks(cls, stays, features, blocks, masks, bin_width_minutes=DEFAULT_BIN_WIDTH, **kw):
        """Build from per-stay ``features x bins`` blocks."""
        lengths = [np.shape(b)[1] for b in blocks]
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        nf = len(features)
        values = np.concatenate([np.asarray(b, float).T for b in blocks]) if blocks else np.empty((0, nf))
        mask = np.concatenate([np.asarray(m, bool).T for m in masks]) if masks else np.empty((0, nf), bool)
        return cls(stays, features, values, mask, offsets, bin_width_minutes, **kw)

    @property
    def n_stays(self) -> int:
        return len(self.stays)

    @property
    def n_rows(self) -> int:
        return len(self.values)

    @property
    def stay_ids(self) -> list[str]:
        return [s.stay_id for s in self.stays]

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def feature_index(self, name: str) -> int:
        try:
            return self.features.index(name)
        except ValueError:
            raise KeyError(f"feature {name!r} not in grid") from None

    def stay_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def stay_values(self, i: int) -> np.ndarray:
        return self.values[self.stay_slice(i)].T

    def stay_mask(self, i: int) -> np.ndarray:
        return self.mask[self.stay_slice(i)].T

    def row_stay_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_stays), self.lengths())

    def row_bin_index(self) -> np.ndarray:
        lens = self.lengths()
        starts = np.repeat(self.offsets[:-1], lens)
        return np.arange(self.n_rows) - starts

    def is_complete(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def with_arrays(self, values=None, mask=None, **kw) -> "AlignedGrid":
        return replace(
            self,
            values=self.values if values is None else values,
            mask=self.mask if mask is None else mask,
            **kw,
        )

    def select_stays(self, indices: Sequence[int]) -> "AlignedGrid":
        """Sub-grid with the given stays, in the given order."""
        indices = list(indices)
        if indices:
            rows = np.concatenate([np.arange(self.offsets[i], self.offsets[i + 1]) for i in indices])
        else:
            rows = np.empty(0, dtype=np.int64)
        lens = self.lengths()[indices] if indices else np.empty(0, np.int64)
        offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)

        def take(a):
            return None if a is None else a[rows]

        return AlignedGrid(
            stays=tuple(self.stays[i] for i in indices),
            features=self.features,
            values=self.values[rows],
            mask=self.mask[rows],
            offsets=offsets,
            bin_width_minutes=self.bin_width_minutes,
            truth=take(self.truth),
            provenance_mask=take(self.provenance_mask),
        )

    def check_invariants(self) -> None:
        if np.any(~self.mask & ~np.isnan(self.values)):
            raise AssertionError("unobserved entry holds a value instead of the missing sentinel")
        if np.any(self.mask & ~np.isfinite(self.values)):
            raise AssertionError("observed entry is not finite")


class StaticEncoder:
    """One-hot/numeric encoding of stay statics, fitted on training stays.

    Numeric statics (age, admission weight) are mean-filled when absent.
    Admission diagnosis keeps the ``max_dx`` most frequent training codes
    plus an ``other`` bucket.
    """

    def __init__(self, max_dx: int = 32):
        self.max_dx = max_dx

    def fit(self, stays: Sequence[StayInfo]) -> "StaticEncoder":
        ages = np.array([s.age for s in stays], dtype=float)
        weights = np.array([s.admission_weight for s in stays], dtype=float)
        self.age_fill_ = float(np.nanmean(ages)) if np.any(np.isfinite(ages)) else 0.0
        self.weight_fill_ = float(np.nanmean(weights)) if np.any(np.isfinite(weights)) else 0.0
        self.genders_ = sorted({s.gender for s in stays})
        self.ethnicities_ = sorted({s.ethnicity for s in stays})
        counts: dict[str, int] = {}
        for s in stays:
            counts[s.admission_dx] = counts.get(s.admission_dx, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        self.dx_codes_ = [k for k, _ in ranked[: self.max_dx]]
        return self

    @property
    def names(self) -> list[str]:
        return (
            ["age", "admission_weight"]
            + [f"gender={g}" for g in self.genders_]
            + [f"ethnicity={e}" for e in self.ethnicities_]
            + [f"dx={d}" for d in self.dx_codes_]
            + ["dx=other"]
        )

    def transform(self, stays: Sequence[StayInfo]) -> np.ndarray:
        out = np.zeros((len(stays), len(self.names)))
        g_idx = {g: i for i, g in enumerate(self.genders_)}
        e_idx = {e: i for i, e in enumerate(self.ethnicities_)}
        d_idx = {d: i for i, d in enumerate(self.dx_codes_)}
        ng, ne, nd = len(self.genders_), len(self.ethnicities_), len(self.dx_codes_)
        for r, s in enumerate(stays):
            out[r, 0] = s.age if math.isfinite(s.age) else self.age_fill_
            out[r, 1] = s.admission_weight if math.isfinite(s.admission_weight) else self.weight_fill_
            if s.gender in g_idx:
                out[r, 2 + g_idx[s.gender]] = 1.0
            if s.ethnicity in e_idx:
                out[r, 2 + ng + e_idx[s.ethnicity]] = 1.0
            out[r, 2 + ng + ne + d_idx.get(s.admission_dx, nd)] = 1.0
        return out
