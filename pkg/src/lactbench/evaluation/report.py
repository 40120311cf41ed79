"""ResultTable files and the Markdown report.

Files written by :func:`write_results`:

``results_summary.csv``
    imputer, model, metric, mean, std, n_folds, failure
``results_folds.csv``
    metric, imputer, model, fold, value (long format, one row per fold)
``predictions.csv``
    imputer, model, fold, stay_id, t_index, y_true, y_pred

Floats are written with ``repr`` so reruns are byte-comparable.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .experiment import ResultTable
from .metrics import LOWER_IS_BETTER, METRICS

SUMMARY = "results_summary.csv"
FOLDS = "results_folds.csv"
PREDICTIONS = "predictions.csv"
FAILED = "—"


def _num(x) -> str:
    return repr(float(x))


def _one_line(s: str) -> str:
    return " ".join(str(s).split())


def write_results(table: ResultTable, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / SUMMARY, out / FOLDS, out / PREDICTIONS]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["imputer", "model", "metric", "mean", "std", "n_folds", "failure"])
        for r in table.summary_rows():
            w.writerow([r["imputer"], r["model"], r["metric"], _num(r["mean"]), _num(r["std"]), r["n_folds"],
                        _one_line(r["failure"])])
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "imputer", "model", "fold", "value"])
        for r in table.fold_rows():
            w.writerow([r["metric"], r["imputer"], r["model"], r["fold"], _num(r["value"])])
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["imputer", "model", "fold", "stay_id", "t_index", "y_true", "y_pred"])
        for imp, model, k, s, t, yt, yp in table.predictions:
            w.writerow([imp, model, k, s, t, _num(yt), _num(yp)])
    return paths


def read_results(result_dir) -> ResultTable:
    """Rebuild a ResultTable (without predictions) from its CSV files."""
    d = Path(result_dir)
    summary = d / SUMMARY
    if not summary.exists():
        raise FileNotFoundError(f"{summary} not found")
    imputers, models = [], []
    failures = {}
    n_folds = 0
    with open(summary, newline="") as fh:
        for r in csv.DictReader(fh):
            if r["imputer"] not in imputers:
                imputers.append(r["imputer"])
            if r["model"] not in models:
                models.append(r["model"])
            if r["failure"]:
                failures[(r["imputer"], r["model"])] = r["failure"]
            n_folds = max(n_folds, int(r["n_folds"]))
    values = {}
    if (d / FOLDS).exists():
        with open(d / FOLDS, newline="") as fh:
            for r in csv.DictReader(fh):
                cell = values.setdefault((r["imputer"], r["model"]), {m: [] for m in METRICS})
                cell[r["metric"]].append(float(r["value"]))
                n_folds = max(n_folds, int(r["fold"]) + 1)
    for key in values:
        if key not in failures and len(values[key]["MAE"]) != n_folds:
            failures[key] = f"only {len(values[key]['MAE'])} of {n_folds} folds present"
    for imp in imputers:
        for model in models:
            if (imp, model) not in values and (imp, model) not in failures:
                failures[(imp, model)] = "no results"
    return ResultTable(tuple(imputers), tuple(models), n_folds, values, failures)


def best_cells(table: ResultTable) -> dict[str, tuple[str, str]]:
    """Per metric, the (imputer, model) with the best mean; ties go to the first in table order."""
    best = {}
    for metric in METRICS:
        pick, val = None, None
        for imp in table.imputers:
            for model in table.models:
                mean, _ = table.cell(imp, model, metric)
                if not math.isfinite(mean):
                    continue
                better = val is None or (mean < val if LOWER_IS_BETTER[metric] else mean > val)
                if better:
                    pick, val = (imp, model), mean
        if pick is not None:
            best[metric] = pick
    return best


def render_markdown(table: ResultTable, digits: int = 3) -> str:
    """Metric-major tables: imputers as rows, models as columns, ``mean ± std`` cells.

    The best cell per metric is bold; failed cells show an em dash and are
    listed under the table.
    """
    best = best_cells(table)
    lines = [f"Results over {table.folds} folds (mean ± std).", ""]
    notes = []
    for metric in METRICS:
        lines.append(f"### {metric}")
        lines.append("")
        lines.append("| Imputation | " + " | ".join(table.models) + " |")
        lines.append("|---|" + "---|" * len(table.models))
        for imp in table.imputers:
            cells = []
            for model in table.models:
                mean, std = table.cell(imp, model, metric)
                if (imp, model) in table.failures or not math.isfinite(mean):
                    cells.append(FAILED)
                    continue
                txt = f"{mean:.{digits}f} ± {std:.{digits}f}"
                if best.get(metric) == (imp, model):
                    txt = f"**{txt}**"
                cells.append(txt)
            lines.append(f"| {imp} | " + " | ".join(cells) + " |")
        lines.append("")
    for (imp, model), msg in sorted(table.failures.items()):
        notes.append(f"- {imp} + {model}: {msg}")
    if notes:
        lines += ["### Failed cells", ""] + notes + [""]
    return "\n".join(lines)


def write_report(table: ResultTable, out_dir) -> list[Path]:
    """Write ``report.md`` and the long-format ``plot_data.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    md = out / "report.md"
    md.write_text(render_markdown(table))
    plot = out / "plot_data.csv"
    with open(plot, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "imputer", "model", "fold", "value"])
        for r in table.fold_rows():
            w.writerow([r["metric"], r["imputer"], r["model"], r["fold"], _num(r["value"])])
    return [md, plot]


def seed_average(tables: list[ResultTable], metric: str) -> dict[tuple[str, str], float]:
    """Mean over tables of each cell's fold-mean (NaN when any table failed the cell)."""
    out = {}
    for imp in tables[0].imputers:
        for model in tables[0].models:
            out[(imp, model)] = float(np.mean([t.cell(imp, model, metric)[0] for t in tables]))
    return out
