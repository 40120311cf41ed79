"""Cross-validated imputer x model experiments."""

from __future__ import annotations

import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from threadpoolctl import threadpool_limits

from ..datamodel import AlignedGrid, TaskParams
from ..impute import METHODS, ImputerSpec, make_imputer
from ..models import (
    MODELS,
    ForestParams,
    LassoParams,
    LstmParams,
    Standardizer,
    forest_fit,
    lasso_fit,
    lstm_fit,
    lstm_predict,
    pad_and_flatten,
)
from .folds import kfold
from .metrics import METRICS
from .samples import SampleSet, build_samples

log = logging.getLogger(__name__)

MODEL_PARAM_TYPES = {"LR": LassoParams, "RF": ForestParams, "LSTM": LstmParams}


class ExperimentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's results.

    ``data`` names the source: ``{"grid": <directory>}`` for a saved grid,
    or ``{"synth": <SynthConfig json>, "missingness": <MissingnessSpec json>}``.
    ``split_unit`` is ``"stay"`` (default) or ``"sample"``; with sample-level
    splits the imputer is fitted once on the whole grid.  LR and LSTM inputs
    are always standardized with training-fold statistics; ``standardize_all``
    extends this to RF.
    """

    task: TaskParams = TaskParams()
    imputers: tuple = METHODS
    models: tuple = MODELS
    folds: int = 5
    rng_seed: int = 0
    max_window_bins: int = 12
    standardize_all: bool = False
    split_unit: str = "stay"
    imputer_params: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    model_params: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    data: Mapping[str, Any] = field(default_factory=dict)

    def validate(self, bin_width_minutes: int | None = None) -> None:
        if self.folds < 2:
            raise ExperimentConfigError("folds must be >= 2")
        if not self.models:
            raise ExperimentConfigError("model list is empty")
        if not self.imputers:
            raise ExperimentConfigError("imputer list is empty")
        bad = [m for m in self.imputers if m not in METHODS]
        if bad:
            raise ExperimentConfigError(f"unknown imputer(s) {bad}; legal names: {', '.join(METHODS)}")
        bad = [m for m in self.models if m not in MODELS]
        if bad:
            raise ExperimentConfigError(f"unknown model(s) {bad}; legal names: {', '.join(MODELS)}")
        if len(set(self.imputers)) != len(self.imputers) or len(set(self.models)) != len(self.models):
            raise ExperimentConfigError("duplicate imputer or model names")
        if self.max_window_bins < 1:
            raise ExperimentConfigError("max_window_bins must be >= 1")
        if self.split_unit not in ("stay", "sample"):
            raise ExperimentConfigError("split_unit must be 'stay' or 'sample'")
        for name, p in self.model_params.items():
            if name not in MODEL_PARAM_TYPES:
                raise ExperimentConfigError(f"model_params for unknown model {name!r}")
            try:
                MODEL_PARAM_TYPES[name](**p).validate()
            except TypeError as exc:
                raise ExperimentConfigError(f"model_params[{name!r}]: {exc}") from None
            except ValueError as exc:
                raise ExperimentConfigError(str(exc)) from None
        for name, p in self.imputer_params.items():
            if name not in METHODS:
                raise ExperimentConfigError(f"imputer_params for unknown imputer {name!r}")
            try:
                make_imputer(ImputerSpec(name, p))
            except ValueError as exc:
                raise ExperimentConfigError(str(exc)) from None
        if bin_width_minutes is not None:
            try:
                self.task.validate(bin_width_minutes)
            except ValueError as exc:
                raise ExperimentConfigError(str(exc)) from None
            if self.max_window_bins * bin_width_minutes < self.task.alpha_minutes:
                raise ExperimentConfigError("max_window_bins must cover at least alpha minutes")

    def to_json(self) -> dict:
        return {
            "task": {"alpha_minutes": self.task.alpha_minutes, "beta_minutes": self.task.beta_minutes},
            "imputers": list(self.imputers),
            "models": list(self.models),
            "folds": self.folds,
            "rng_seed": self.rng_seed,
            "max_window_bins": self.max_window_bins,
            "standardize_all": self.standardize_all,
            "split_unit": self.split_unit,
            "imputer_params": {k: dict(v) for k, v in self.imputer_params.items()},
            "model_params": {k: dict(v) for k, v in self.model_params.items()},
            "data": dict(self.data),
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        task = d.pop("task", {})
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ExperimentConfigError(f"unknown experiment key(s) {sorted(unknown)}")
        for key in ("imputers", "models"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(task=TaskParams(**task), **d)

    def with_subset(self, imputers=None, models=None) -> "ExperimentConfig":
        from dataclasses import replace

        return replace(
            self,
            imputers=tuple(imputers) if imputers else self.imputers,
            models=tuple(models) if models else self.models,
        )


def derive_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def resolve_data(cfg: ExperimentConfig, base_dir=".") -> AlignedGrid:
    from ..interchange import load_grid
    from ..synth import MissingnessSpec, SynthConfig, apply_missingness, generate_cohort

    data = dict(cfg.data)
    if "grid" in data:
        path = Path(data["grid"])
        if not path.is_absolute():
            path = Path(base_dir) / path
        grid, _ = load_grid(path, data.get("name", "grid"))
        return grid
    if "synth" in data:
        grid = generate_cohort(SynthConfig.from_json(data["synth"]))
        if data.get("missingness"):
            grid = apply_missingness(grid, MissingnessSpec.from_json(data["missingness"]))
        return grid
    raise ExperimentConfigError("data source must name 'grid' or 'synth'")


# -- one job: an imputer on one fold, followed by every model ---------------


def _design(train: SampleSet, test: SampleSet, cfg: ExperimentConfig, standardize: bool):
    htr, hte = train.histories, test.histories
    if standardize:
        st = Standardizer.fit(htr)
        htr, hte = st.apply(htr), st.apply(hte)
    return htr, hte


def _fit_predict(model: str, train: SampleSet, test: SampleSet, cfg: ExperimentConfig, seed: int) -> np.ndarray:
    overrides = dict(cfg.model_params.get(model, {}))
    y = train.targets
    if model == "LSTM":
        htr, hte = _design(train, test, cfg, standardize=True)
        params = LstmParams(**{**overrides, "rng_seed": seed})
        net = lstm_fit([h.T for h in htr], y, params, max_len=cfg.max_window_bins)
        return lstm_predict(net, [h.T for h in hte])
    # the lasso penalty is defined on standardized inputs; RF only when asked
    htr, hte = _design(train, test, cfg, standardize=cfg.standardize_all or model == "LR")
    Xtr = pad_and_flatten(htr, cfg.max_window_bins)
    Xte = pad_and_flatten(hte, cfg.max_window_bins)
    if model == "LR":
        return lasso_fit(Xtr, y, LassoParams(**overrides)).predict(Xte)
    params = ForestParams(**{**overrides, "rng_seed": seed})
    return forest_fit(Xtr, y, params).predict(Xte)


def _split_samples(samples: SampleSet, cfg: ExperimentConfig, fold: int):
    assign = kfold(range(len(samples)), cfg.folds, cfg.rng_seed)
    tr = [s for i, s in enumerate(samples.samples) if assign.fold_of[i] != fold]
    te = [s for i, s in enumerate(samples.samples) if assign.fold_of[i] == fold]
    return SampleSet(tr, 0), SampleSet(te, 0)


def run_job(grid: AlignedGrid, cfg: ExperimentConfig, imputer: str, fold: int) -> dict:
    """Fit ``imputer`` on the training fold and score every model on the test fold.

    Returns a plain dict (picklable) with per-model metrics, predictions,
    failures and timings.
    """
    imp_idx = METHODS.index(imputer)
    out = {"imputer": imputer, "fold": fold, "metrics": {}, "predictions": {}, "failures": {}, "seconds": {}}
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        try:
            spec = ImputerSpec(imputer, cfg.imputer_params.get(imputer, {}), derive_seed(cfg.rng_seed, imp_idx, fold))
            if cfg.split_unit == "stay":
                assign = kfold(grid.stay_ids, cfg.folds, cfg.rng_seed)
                tr_idx = [i for i, s in enumerate(grid.stay_ids) if assign.fold_of[s] != fold]
                te_idx = [i for i, s in enumerate(grid.stay_ids) if assign.fold_of[s] == fold]
                train_grid, test_grid = grid.select_stays(tr_idx), grid.select_stays(te_idx)
                imp = make_imputer(spec).fit(train_grid)
                train = build_samples(imp.transform(train_grid), cfg.task, cfg.max_window_bins)
                test = build_samples(imp.transform(test_grid), cfg.task, cfg.max_window_bins)
            else:
                imp = make_imputer(spec).fit(grid)
                train, test = _split_samples(build_samples(imp.transform(grid), cfg.task, cfg.max_window_bins), cfg, fold)
            if len(train) < 2 or len(test) < 1:
                raise RuntimeError(f"too few samples (train {len(train)}, test {len(test)})")
        except Exception as exc:
            msg = f"imputer {imputer} failed: {exc}"
            log.debug(traceback.format_exc())
            for m in cfg.models:
                out["failures"][m] = msg
            return out
        out["seconds"]["impute"] = time.perf_counter() - t0
        y_true = test.targets
        keys = test.keys()
        for model in cfg.models:
            t1 = time.perf_counter()
            try:
                seed = derive_seed(cfg.rng_seed, imp_idx, fold, MODELS.index(model))
                y_pred = np.asarray(_fit_predict(model, train, test, cfg, seed), dtype=float)
                out["metrics"][model] = {name: f(y_true, y_pred) for name, f in METRICS.items()}
                out["predictions"][model] = [(s, t, yt, yp) for (s, t), yt, yp in zip(keys, y_true, y_pred)]
            except Exception as exc:
                log.debug(traceback.format_exc())
                out["failures"][model] = f"{type(exc).__name__}: {exc}"
            out["seconds"][model] = time.perf_counter() - t1
    return out


def _job_entry(args):
    return run_job(*args)


# -- aggregation ------------------------------------------------------------


@dataclass
class ResultTable:
    """Per-(imputer, model) fold metrics, failures and predictions.

    ``folds_`` maps ``(imputer, model)`` to ``{metric: [value per fold]}``;
    a cell with any failed fold is marked failed and has no summary.
    """

    imputers: tuple
    models: tuple
    folds: int
    values: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    predictions: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def cell(self, imputer: str, model: str, metric: str) -> tuple[float, float]:
        """Mean and standard deviation (ddof=1) over the folds, NaN for failed cells."""
        if (imputer, model) in self.failures:
            return float("nan"), float("nan")
        v = np.asarray(self.values[(imputer, model)][metric], dtype=float)
        return float(v.mean()), float(v.std(ddof=1))

    def summary_rows(self) -> list[dict]:
        rows = []
        for imp in self.imputers:
            for model in self.models:
                for metric in METRICS:
                    mean, std = self.cell(imp, model, metric)
                    rows.append(
                        {
                            "imputer": imp,
                            "model": model,
                            "metric": metric,
                            "mean": mean,
                            "std": std,
                            "n_folds": 0 if (imp, model) in self.failures else self.folds,
                            "failure": self.failures.get((imp, model), ""),
                        }
                    )
        return rows

    def fold_rows(self) -> list[dict]:
        rows = []
        for imp in self.imputers:
            for model in self.models:
                for metric in METRICS:
                    vals = self.values.get((imp, model), {}).get(metric)
                    if vals is None:
                        continue
                    for k, v in enumerate(vals):
                        rows.append({"metric": metric, "imputer": imp, "model": model, "fold": k, "value": v})
        return rows


def run_experiment(cfg: ExperimentConfig, grid: AlignedGrid | None = None, jobs: int = 1, base_dir=".") -> ResultTable:
    """Run every (imputer, fold) job and aggregate by cell.

    Jobs are independent and seeded from ``cfg.rng_seed`` and the canonical
    positions of the imputer, fold and model, so results do not depend on
    ``jobs``, on completion order, or on which subset of methods is run.
    """
    if grid is None:
        grid = resolve_data(cfg, base_dir)
    cfg.validate(grid.bin_width_minutes)
    units = grid.stay_ids if cfg.split_unit == "stay" else None
    if units is not None and len(units) < cfg.folds:
        raise ExperimentConfigError(f"{len(units)} stays cannot fill {cfg.folds} folds")
    tasks = [(grid, cfg, imp, k) for imp in cfg.imputers for k in range(cfg.folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job_entry, tasks))
    else:
        results = [_job_entry(t) for t in tasks]
    by_key = {(r["imputer"], r["fold"]): r for r in results}
    table = ResultTable(tuple(cfg.imputers), tuple(cfg.models), cfg.folds)
    for imp in cfg.imputers:
        for model in cfg.models:
            per_metric = {m: [] for m in METRICS}
            notes = []
            for k in range(cfg.folds):
                r = by_key[(imp, k)]
                table.timings[(imp, model, k)] = r["seconds"].get(model, float("nan"))
                if model in r["failures"]:
                    notes.append(f"fold {k}: {r['failures'][model]}")
                    continue
                for m, v in r["metrics"][model].items():
                    per_metric[m].append(v)
                for s, t, yt, yp in r["predictions"][model]:
                    table.predictions.append((imp, model, k, s, t, yt, yp))
            if notes:
                table.failures[(imp, model)] = "; ".join(notes)
            else:
                table.values[(imp, model)] = per_metric
            if per_metric["MAE"]:
                # keep partial values for inspection even when some folds failed
                table.values.setdefault((imp, model), per_metric)
    return table
