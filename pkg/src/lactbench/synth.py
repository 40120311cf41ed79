"""Synthetic ICU cohorts and missingness corruption.

Each stay carries a latent patient state: an AR(1) process per latent
dimension plus a persistent stay-level offset, scaled so every coordinate is
marginally standard normal.  Vitals and labs are noisy linear readouts of
that state.  Lactate is driven by a state projection passed through a
Gaussian copula onto a four-component log-normal mixture, so its marginal
distribution is the mixture while its history stays predictive.  Features
are observed only every ``period`` bins (random phase per stay).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, special, stats

from .datamodel import (
    LACTATE,
    MISSING,
    SEVERITY_EDGES,
    AlignedGrid,
    FeatureTable,
    SeverityCategory,
    StayInfo,
    categorize_lactate_array,
)


class ConfigError(ValueError):
    pass


TABLE2_WEIGHTS = (0.531, 0.265, 0.089, 0.115)


@dataclass(frozen=True)
class SynthFeature:
    name: str
    mean: float
    std: float
    period: int = 1
    loading: float = 0.7


DEFAULT_FEATURES = (
    SynthFeature("heart_rate", 92.0, 18.0, 1),
    SynthFeature("respiratory_rate", 20.0, 5.0, 1),
    SynthFeature("spo2", 95.5, 2.5, 1),
    SynthFeature("temperature", 37.1, 0.7, 1, 0.5),
    SynthFeature("nibp_mean", 78.0, 13.0, 1),
    SynthFeature("ph", 7.35, 0.08, 2),
    SynthFeature("base_excess", -3.0, 5.0, 2),
    SynthFeature("glucose", 145.0, 45.0, 3, 0.5),
    SynthFeature("potassium", 4.1, 0.6, 6, 0.4),
    SynthFeature("creatinine", 1.6, 0.9, 6, 0.5),
    SynthFeature("hgb", 10.2, 2.0, 6, 0.4),
)

GENDERS = (("Male", 0.55), ("Female", 0.45))
ETHNICITIES = (
    ("Caucasian", 0.77),
    ("African American", 0.11),
    ("Hispanic", 0.04),
    ("Asian", 0.02),
    ("Other/Unknown", 0.06),
)
DIAGNOSES = (
    ("Sepsis, pulmonary", 0.121),
    ("Cardiac arrest", 0.085),
    ("Sepsis, renal/UTI", 0.063),
    ("Sepsis, GI", 0.053),
    ("CHF, congestive heart failure", 0.06),
    ("Infarction, acute myocardial", 0.06),
    ("Overdose, other toxin", 0.05),
    ("GI bleeding", 0.06),
    ("Diabetic ketoacidosis", 0.05),
    ("Pneumonia, bacterial", 0.06),
    ("Respiratory failure", 0.08),
    ("Other", 0.258),
)


@dataclass(frozen=True)
class LactateMixture:
    """Log-normal components (median, log-sd) and the band proportions to hit."""

    medians: tuple[float, ...] = (1.2, 2.8, 4.9, 9.0)
    log_sds: tuple[float, ...] = (0.3, 0.2, 0.1, 0.35)
    target_weights: tuple[float, ...] = TABLE2_WEIGHTS

    def validate(self) -> None:
        if not (len(self.medians) == len(self.log_sds) == len(self.target_weights) == 4):
            raise ConfigError("lactate mixture needs exactly four components")
        if any(s <= 0 for s in self.log_sds) or any(m <= 0 for m in self.medians):
            raise ConfigError("lactate mixture components need positive median and log-sd")
        if abs(sum(self.target_weights) - 1.0) > 1e-9 or min(self.target_weights) < 0:
            raise ConfigError("lactate target weights must be non-negative and sum to 1")

    def band_matrix(self) -> np.ndarray:
        """P(component k falls in severity band c), shape (bands, components)."""
        edges = np.concatenate([[0.0], SEVERITY_EDGES, [np.inf]])
        mu = np.log(self.medians)
        sd = np.asarray(self.log_sds)
        with np.errstate(divide="ignore"):
            cdf = stats.norm.cdf((np.log(edges)[:, None] - mu[None, :]) / sd[None, :])
        return np.diff(cdf, axis=0)

    def component_weights(self) -> np.ndarray:
        """Mixture weights whose band probabilities equal the targets."""
        self.validate()
        w, resid = optimize.nnls(self.band_matrix(), np.asarray(self.target_weights))
        if resid > 1e-8:
            raise ConfigError(f"target band weights unreachable with these components (residual {resid:.2e})")
        return w / w.sum()

    def quantile_function(self):
        """Inverse CDF of the mixture, tabulated on a fine log grid."""
        w = self.component_weights()
        mu = np.log(self.medians)
        sd = np.asarray(self.log_sds)
        grid = np.linspace((mu - 7 * sd).min(), (mu + 7 * sd).max(), 20001)
        cdf = (w[None, :] * stats.norm.cdf((grid[:, None] - mu) / sd)).sum(axis=1)
        cdf, idx = np.unique(cdf, return_index=True)
        log_x = grid[idx]

        def q(p):
            return np.exp(np.interp(p, cdf, log_x))

        return q


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 300
    stay_length_mean_bins: float = 24.0
    stay_length_std_bins: float = 10.0
    min_stay_bins: int = 9
    max_stay_bins: int = 120
    repeat_stay_prob: float = 0.0
    latent_dim: int = 3
    ar_coef: float = 0.85
    stay_effect_weight: float = 0.4
    lactate_link: float = 0.8
    lactate_period: int = 3
    lactate_mixture: LactateMixture = field(default_factory=LactateMixture)
    features: tuple[SynthFeature, ...] = DEFAULT_FEATURES
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n_patients < 1:
            raise ConfigError("n_patients must be >= 1")
        if self.latent_dim < 0:
            raise ConfigError("latent_dim must be >= 0")
        if not 0 <= self.ar_coef < 1 or not 0 <= self.stay_effect_weight < 1:
            raise ConfigError("ar_coef and stay_effect_weight must lie in [0, 1)")
        if not 0 <= self.lactate_link <= 1:
            raise ConfigError("lactate_link must lie in [0, 1]")
        if not 0 <= self.repeat_stay_prob < 1:
            raise ConfigError("repeat_stay_prob must lie in [0, 1)")
        if self.lactate_period < 1 or any(f.period < 1 for f in self.features):
            raise ConfigError("sampling periods must be >= 1")
        if any(f.std <= 0 for f in self.features):
            raise ConfigError("feature std must be positive")
        if any(not 0 <= f.loading <= 1 for f in self.features):
            raise ConfigError("feature loading must lie in [0, 1]")
        if self.min_stay_bins < 1 or self.max_stay_bins < self.min_stay_bins:
            raise ConfigError("need 1 <= min_stay_bins <= max_stay_bins")
        names = [f.name for f in self.features]
        if LACTATE in names or len(set(names)) != len(names):
            raise ConfigError("feature names must be unique and exclude lactate")
        self.lactate_mixture.validate()

    @property
    def feature_names(self) -> list[str]:
        return [LACTATE] + [f.name for f in self.features]

    def to_json(self) -> dict:
        d = asdict(self)
        d["lactate_mixture"] = {k: list(v) for k, v in d["lactate_mixture"].items()}
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        if "lactate_mixture" in d:
            d["lactate_mixture"] = LactateMixture(**{k: tuple(v) for k, v in d["lactate_mixture"].items()})
        if "features" in d:
            d["features"] = tuple(SynthFeature(**f) for f in d["features"])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg


def _ar_block(rng: np.random.Generator, n_bins: int, dim: int, phi: float, stay_w: float) -> np.ndarray:
    """Marginally N(0, 1) series: persistent stay offset plus stationary AR(1)."""
    a = rng.standard_normal(dim)
    e = np.empty((n_bins, dim))
    e[0] = rng.standard_normal(dim)
    innov = rng.standard_normal((n_bins, dim)) * math.sqrt(1 - phi * phi)
    for t in range(1, n_bins):
        e[t] = phi * e[t - 1] + innov[t]
    return math.sqrt(stay_w) * a + math.sqrt(1 - stay_w) * e


def _choice(rng, options):
    names, probs = zip(*options)
    p = np.asarray(probs) / sum(probs)
    return names[int(rng.choice(len(names), p=p))]


def generate_cohort(config: SynthConfig, feature_table: FeatureTable | None = None) -> AlignedGrid:
    """Fully observed (at native periods) synthetic grid; deterministic in ``rng_seed``.

    Every stay draws from its own generator seeded by ``(rng_seed, stay index)``.
    Readouts are clipped to the feature's valid range when a feature table is
    given (the shipped dictionary by default).
    """
    config.validate()
    table = feature_table or FeatureTable.load()
    quantile = config.lactate_mixture.quantile_function()
    d = config.latent_dim
    struct_rng = np.random.default_rng([config.rng_seed, 0xFEED])
    n_feat = len(config.features)
    if d:
        loadings = struct_rng.standard_normal((n_feat, d))
        loadings /= np.linalg.norm(loadings, axis=1, keepdims=True)
        lac_dir = struct_rng.standard_normal(d)
        lac_dir /= np.linalg.norm(lac_dir)
    names = config.feature_names
    bounds = []
    for n in names:
        spec = table.specs.get(n)
        bounds.append((spec.valid_min, spec.valid_max) if spec else (-np.inf, np.inf))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    periods = [config.lactate_period] + [f.period for f in config.features]

    stays, blocks, masks = [], [], []
    n_stays_per_patient = np.random.default_rng([config.rng_seed, 0xBEEF]).geometric(
        1 - config.repeat_stay_prob, config.n_patients)
    index = 0
    for p in range(config.n_patients):
        for _ in range(int(n_stays_per_patient[p])):
            rng = np.random.default_rng([config.rng_seed, index])
            L = int(np.clip(round(rng.normal(config.stay_length_mean_bins, config.stay_length_std_bins)),
                            config.min_stay_bins, config.max_stay_bins))
            own = _ar_block(rng, L, 1, config.ar_coef, config.stay_effect_weight)[:, 0]
            if d:
                z = _ar_block(rng, L, d, config.ar_coef, config.stay_effect_weight)
                u = config.lactate_link * (z @ lac_dir) + math.sqrt(1 - config.lactate_link ** 2) * own
            else:
                u = own
            lactate = quantile(special.ndtr(u))
            block = np.empty((len(names), L))
            block[0] = lactate
            noise = rng.standard_normal((n_feat, L))
            for j, f in enumerate(config.features):
                signal = (z @ loadings[j]) if d else np.zeros(L)
                r = f.loading if d else 0.0
                block[j + 1] = f.mean + f.std * (r * signal + math.sqrt(1 - r * r) * noise[j])
            block = np.clip(block, lo[:, None], hi[:, None])
            mask = np.zeros_like(block, dtype=bool)
            for j, per in enumerate(periods):
                phase = int(rng.integers(per))
                mask[j, phase::per] = True
            block[~mask] = MISSING
            age = float(np.clip(rng.normal(61.8, 15.7), 19.0, 95.0))
            stays.append(StayInfo(
                patient_id=f"P{p:06d}",
                stay_id=f"S{index:06d}",
                age=round(age, 1),
                gender=_choice(rng, GENDERS),
                ethnicity=_choice(rng, ETHNICITIES),
                admission_weight=round(float(np.clip(rng.normal(84.0, 24.0), 35.0, 250.0)), 1),
                admission_dx=_choice(rng, DIAGNOSES),
                los_minutes=float(L * 120),
            ))
            blocks.append(block)
            masks.append(mask)
            index += 1
    return AlignedGrid.from_blocks(stays, names, blocks, masks, 120)


def lactate_category_proportions(grid: AlignedGrid) -> np.ndarray:
    """Share of observed lactate cells in each severity band."""
    j = grid.feature_index(LACTATE)
    cats = categorize_lactate_array(grid.values[grid.mask[:, j], j])
    counts = np.bincount(cats[cats >= 0], minlength=4).astype(float)
    return counts / max(counts.sum(), 1.0)


DEFAULT_MNAR_CURVE = {"Normal": 3.0, "Mild": 2.0, "Moderate": 1.5, "Severe": 1.0}


@dataclass(frozen=True)
class MissingnessSpec:
    """Corruption mechanism.

    ``curve`` maps severity band names to relative masking weights for MNAR.
    Lactate cells use their clinical band; other features use a band of
    their absolute z-score (<=0.5, <=1, <=1.5, >1.5 standard deviations
    from the feature mean map to Normal..Severe).
    """

    mechanism: str = "MCAR"
    rate: float = 0.3
    features: tuple[str, ...] | None = None
    conditioning_feature: str | None = None
    mar_slope: float = 2.0
    curve: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_MNAR_CURVE))
    rng_seed: int = 0

    def validate(self) -> None:
        if self.mechanism not in ("MCAR", "MAR", "MNAR"):
            raise ConfigError(f"mechanism must be MCAR, MAR or MNAR, got {self.mechanism!r}")
        if not 0 <= self.rate < 1:
            raise ConfigError("rate must lie in [0, 1)")
        if self.mechanism == "MAR" and not self.conditioning_feature:
            raise ConfigError("MAR needs a conditioning_feature")
        if self.mechanism == "MNAR":
            missing = [c.name.capitalize() for c in SeverityCategory if c.name.capitalize() not in self.curve]
            if missing or any(v <= 0 for v in self.curve.values()):
                raise ConfigError("MNAR curve needs positive weights for Normal, Mild, Moderate, Severe")

    @classmethod
    def from_json(cls, d: Mapping) -> "MissingnessSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown missingness keys: {sorted(unknown)}")
        if d.get("features") is not None:
            d["features"] = tuple(d["features"])
        spec = cls(**d)
        spec.validate()
        return spec

    def to_json(self) -> dict:
        d = asdict(self)
        d["curve"] = dict(self.curve)
        if d["features"] is not None:
            d["features"] = list(d["features"])
        return d


def severity_bands(grid: AlignedGrid, j: int, values: np.ndarray | None = None) -> np.ndarray:
    """Band index (0..3) per row for feature ``j``; -1 where unobserved."""
    col = grid.values[:, j] if values is None else values
    obs = np.isfinite(col)
    out = np.full(len(col), -1, dtype=np.int64)
    if grid.features[j] == LACTATE:
        out[obs] = categorize_lactate_array(col[obs])
        return out
    if obs.sum() == 0:
        return out
    x = col[obs]
    sd = x.std()
    z = np.abs(x - x.mean()) / (sd if sd > 0 else 1.0)
    out[obs] = np.searchsorted(np.array([0.5, 1.0, 1.5]), z, side="left")
    return out


def _calibrate_logistic(scores: np.ndarray, rate: float) -> np.ndarray:
    if rate == 0 or len(scores) == 0:
        return np.full(len(scores), rate)
    lo, hi = -50.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if special.expit(mid + scores).mean() < rate:
            lo = mid
        else:
            hi = mid
    return special.expit(0.5 * (lo + hi) + scores)


def apply_missingness(grid: AlignedGrid, spec: MissingnessSpec) -> AlignedGrid:
    """Mask observed cells according to ``spec``.

    The returned grid keeps the pre-corruption values in ``truth`` (the
    existing sidecar is kept when the input was already corrupted, so
    mechanisms compose).  Masked cells take the missing sentinel.  The
    uniforms are drawn from ``rng_seed`` alone, so composed specs should use
    distinct seeds to act independently.
    """
    spec.validate()
    rng = np.random.default_rng([spec.rng_seed, 0xC0FFEE])
    targets = list(grid.features) if spec.features is None else list(spec.features)
    for f in targets:
        grid.feature_index(f)
    cond = None
    if spec.mechanism == "MAR":
        if spec.conditioning_feature not in grid.features:
            raise ConfigError(f"MAR conditioning feature {spec.conditioning_feature!r} not in grid")
        cond = grid.feature_index(spec.conditioning_feature)
        targets = [f for f in targets if f != spec.conditioning_feature]
    truth = grid.values.copy() if grid.truth is None else grid.truth
    mask = grid.mask.copy()
    values = grid.values.copy()
    u = rng.random(grid.values.shape)
    for f in targets:
        j = grid.feature_index(f)
        obs = mask[:, j]
        p = np.zeros(grid.n_rows)
        if spec.mechanism == "MCAR":
            p[obs] = spec.rate
        elif spec.mechanism == "MAR":
            c = grid.values[:, cond]
            c_obs = grid.mask[:, cond]
            both = obs & c_obs
            if both.any():
                cv = c[both]
                z = (cv - cv.mean()) / (cv.std() if cv.std() > 0 else 1.0)
                p[both] = _calibrate_logistic(spec.mar_slope * z, spec.rate)
            p[obs & ~c_obs] = spec.rate
        else:
            bands = severity_bands(grid, j)
            weights = np.array([spec.curve[c.name.capitalize()] for c in SeverityCategory])
            w = weights[bands[obs]]
            if len(w):
                p[obs] = np.minimum(spec.rate * w / w.mean(), 1.0)
        drop = obs & (u[:, j] < p)
        mask[drop, j] = False
        values[drop, j] = MISSING
    return grid.with_arrays(values, mask, truth=truth)


def load_synth_config(path) -> SynthConfig:
    with open(path) as fh:
        return SynthConfig.from_json(json.load(fh))


def corrupted_cells(grid: AlignedGrid) -> np.ndarray:
    """Cells observed before corruption and masked by it."""
    if grid.truth is None:
        return np.zeros(grid.values.shape, dtype=bool)
    return np.isfinite(grid.truth) & ~grid.mask
