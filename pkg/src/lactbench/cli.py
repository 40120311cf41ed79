"""Command-line front end: ``lactbench <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

Environment variables
---------------------
LACTBENCH_OUT
    Output root used when ``--out`` is omitted (``<root>/<command>``).
LACTBENCH_JOBS
    Default for ``experiment --jobs``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import jsonschema

from . import __version__, schemas

log = logging.getLogger("lactbench")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
MANIFEST = "run_manifest.json"


class UsageError(Exception):
    """Bad configuration or arguments; maps to exit code 2."""


# -- helpers ------------------------------------------------------------------


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps(
            {
                "time": round(record.created, 3),
                "level": record.levelname,
                "logger": record.name,
                "message": record.getMessage(),
            }
        )


def _setup_logging(level: str, as_json: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if as_json else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper(), logging.INFO))


def read_json(path, schema=None):
    """Parse a JSON file, reporting syntax errors with line/column and schema errors with their path."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if schema is not None:
        validate(obj, schema, str(path))
    return obj


def validate(obj, schema, where: str) -> None:
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        loc = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise UsageError(f"{where}: at {loc}: {e.message}")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _versions() -> dict:
    out = {"lactbench": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "pandas", "scikit-learn", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            pass
    return out


class Manifest:
    """Collects provenance for one output directory and writes ``run_manifest.json``."""

    def __init__(self, command: str, out_dir: Path, config=None, seeds=None):
        self.data = {
            "command": command,
            "config_hash": None if config is None else config_hash(config),
            "seeds": seeds or {},
            "versions": _versions(),
            "inputs": {},
            "stages": {},
            "outputs": [],
        }
        self.out_dir = out_dir
        self._t = None

    def add_input(self, path) -> None:
        p = Path(path)
        if p.is_file():
            self.data["inputs"][str(p)] = file_digest(p)
        elif p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    self.data["inputs"][str(f)] = file_digest(f)

    def stage(self, name: str):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                manifest.data["stages"][name] = round(time.perf_counter() - self.t0, 3)

        return _Timer()

    def add_outputs(self, paths) -> None:
        for p in paths:
            p = Path(p)
            try:
                self.data["outputs"].append(str(p.resolve().relative_to(self.out_dir.resolve())))
            except ValueError:
                self.data["outputs"].append(str(p))

    def write(self) -> Path:
        path = self.out_dir / MANIFEST
        self.data["outputs"] = sorted(set(self.data["outputs"]))
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path


def _out_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = os.environ.get("LACTBENCH_OUT")
        if not root:
            raise UsageError("--out not given and LACTBENCH_OUT is not set")
        out = Path(root) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in columns])
    return path


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else None


# -- commands -------------------------------------------------------------------


def load_synth_file(path):
    """Return ``(SynthConfig, MissingnessSpec | None, raw json)``."""
    from .synth import ConfigError, MissingnessSpec, SynthConfig

    raw = read_json(path)
    if isinstance(raw, dict) and "cohort" in raw:
        validate(raw, {"type": "object", "properties": {"cohort": {}, "missingness": {}},
                       "additionalProperties": False}, str(path))
        validate(raw["cohort"], schemas.SYNTH, f"{path}: cohort")
        cohort, miss = raw["cohort"], raw.get("missingness")
        if miss is not None:
            validate(miss, schemas.MISSINGNESS, f"{path}: missingness")
    else:
        validate(raw, schemas.SYNTH, str(path))
        cohort, miss = raw, None
    try:
        return SynthConfig.from_json(cohort), (MissingnessSpec.from_json(miss) if miss else None), raw
    except ConfigError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_synth(args) -> int:
    from .interchange import save_grid
    from .synth import apply_missingness, generate_cohort

    cfg, miss, raw = load_synth_file(args.config)
    if args.missingness:
        from .synth import ConfigError, MissingnessSpec

        try:
            miss = MissingnessSpec.from_json(read_json(args.missingness, schemas.MISSINGNESS))
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    out = _out_dir(args, "synth")
    seeds = {"cohort": cfg.rng_seed}
    if miss is not None:
        seeds["missingness"] = miss.rng_seed
    man = Manifest("synth", out, {"cohort": cfg.to_json(), "missingness": None if miss is None else miss.to_json()}, seeds)
    man.add_input(args.config)
    with man.stage("generate"):
        grid = generate_cohort(cfg)
    if miss is not None:
        with man.stage("corrupt"):
            grid = apply_missingness(grid, miss)
    else:
        grid = grid.with_arrays(grid.values, grid.mask, truth=grid.values.copy())
    with man.stage("write"):
        paths = save_grid(grid, out)
    man.add_outputs(paths.values())
    man.write()
    log.info("wrote %d stays, %d bins to %s", grid.n_stays, grid.n_rows, out)
    return EXIT_OK


def cmd_ingest(args) -> int:
    from .datamodel import FeatureTable
    from .ingest import CohortCriteria, IngestError, SchemaMap, lactate_correlations, observed_percentage, run_ingest
    from .interchange import save_grid

    data_dir = Path(args.data)
    if not data_dir.is_dir() or not any(data_dir.iterdir()):
        raise UsageError(f"data directory {data_dir} is missing or empty")
    features = FeatureTable.load(args.features) if args.features else FeatureTable.load()
    schema_raw = read_json(args.schema) if args.schema else None
    try:
        schema = SchemaMap.from_json(schema_raw, features) if schema_raw else SchemaMap.load(features=features)
        criteria = CohortCriteria(**read_json(args.cohort, schemas.COHORT)) if args.cohort else CohortCriteria.load()
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad schema or cohort config: {exc}") from None
    out = _out_dir(args, "ingest")
    man = Manifest(
        "ingest",
        out,
        {"schema": schema_raw, "cohort": asdict(criteria), "bin_width": args.bin_width},
    )
    man.add_input(data_dir)
    for p in (args.schema, args.cohort, args.features):
        if p:
            man.add_input(p)
    with man.stage("ingest"):
        try:
            result = run_ingest(data_dir, schema, criteria, features, args.bin_width)
        except IngestError as exc:
            raise UsageError(str(exc)) from None
    grid = result.grid
    with man.stage("write"):
        paths = list(save_grid(grid, out, feature_table=features.subset(list(grid.features))).values())
        rep = out / "ingest_report.json"
        rep.write_text(json.dumps(result.report, indent=1, sort_keys=True) + "\n")
        paths.append(rep)
        paths.append(_write_csv(out / "observed_percentage.csv", observed_percentage(grid),
                                ["feature", "n_observed", "n_cells", "percent"]))
        paths.append(_write_csv(out / "lactate_correlation.csv", lactate_correlations(grid),
                                ["feature", "n_pairs", "pearson_r"]))
    man.add_outputs(paths)
    man.write()
    log.info("cohort: %d stays retained; exclusions %s", grid.n_stays, result.report["cohort"]["excluded"])
    return EXIT_OK


def load_experiment_file(path, imputers=None, models=None):
    from .evaluation import ExperimentConfig, ExperimentConfigError

    raw = read_json(path, schemas.EXPERIMENT)
    try:
        cfg = ExperimentConfig.from_json(raw).with_subset(imputers, models)
        cfg.validate()
    except (ExperimentConfigError, TypeError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    return cfg


def cmd_experiment(args) -> int:
    from .evaluation import ExperimentConfigError, resolve_data, run_experiment
    from .evaluation.report import write_results

    cfg = load_experiment_file(args.config, _csv_list(args.imputers), _csv_list(args.models))
    jobs = args.jobs if args.jobs is not None else int(os.environ.get("LACTBENCH_JOBS", "1"))
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out = _out_dir(args, "experiment")
    man = Manifest("experiment", out, cfg.to_json(), {"experiment": cfg.rng_seed})
    man.add_input(args.config)
    base = Path(args.config).resolve().parent
    with man.stage("load_data"):
        try:
            grid = resolve_data(cfg, base)
        except (ExperimentConfigError, FileNotFoundError, ValueError) as exc:
            raise UsageError(f"data source: {exc}") from None
        if "grid" in cfg.data:
            man.add_input(base / cfg.data["grid"])
    with man.stage("run"):
        try:
            table = run_experiment(cfg, grid, jobs=jobs)
        except ExperimentConfigError as exc:
            raise UsageError(str(exc)) from None
    with man.stage("write"):
        paths = write_results(table, out)
    man.data["n_failed_cells"] = len(table.failures)
    man.add_outputs(paths)
    man.write()
    for (imp, model), msg in sorted(table.failures.items()):
        log.warning("cell %s + %s failed: %s", imp, model, msg)
    log.info("%d cells, %d failed; results in %s", len(cfg.imputers) * len(cfg.models), len(table.failures), out)
    return EXIT_OK


def cmd_report(args) -> int:
    from .evaluation.report import read_results, write_report

    src = Path(args.results)
    try:
        table = read_results(src)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    existing = out / MANIFEST
    man = Manifest("report", out)
    if existing.exists():
        man.data = json.loads(existing.read_text())
    man.add_input(src / "results_summary.csv")
    with man.stage("report"):
        paths = write_report(table, out)
    man.add_outputs(paths)
    man.write()
    if table.failures:
        log.warning("%d cell(s) failed or missing; marked in the report", len(table.failures))
    return EXIT_OK


def cmd_impute_fit(args) -> int:
    from .impute import ImputerError, ImputerSpec, fit

    params = read_json(args.params, schemas.IMPUTER_PARAMS) if args.params else {}
    grid, _ = _load_grid_arg(args.grid)
    try:
        imp = fit(ImputerSpec(args.method, params, args.seed), grid)
    except ImputerError as exc:
        raise UsageError(str(exc)) from None
    state = Path(args.state)
    state.parent.mkdir(parents=True, exist_ok=True)
    imp.save(state)
    log.info("fitted %s on %d rows; state in %s", args.method, grid.n_rows, state)
    return EXIT_OK


def cmd_impute_transform(args) -> int:
    from .impute import ImputerError, load_imputer
    from .interchange import save_grid

    try:
        imp = load_imputer(args.state)
    except (OSError, ImputerError) as exc:
        raise UsageError(f"cannot load imputer state: {exc}") from None
    grid, table = _load_grid_arg(args.grid)
    out = _out_dir(args, "impute")
    man = Manifest("impute", out, {"method": imp.method, "params": imp.params}, {"imputer": imp.seed})
    man.add_input(args.state)
    man.add_input(args.grid)
    with man.stage("transform"):
        try:
            done = imp.transform(grid)
        except ImputerError as exc:
            raise UsageError(str(exc)) from None
    paths = save_grid(done, out)
    man.add_outputs(paths.values())
    man.write()
    return EXIT_OK


def _load_grid_arg(directory):
    from .interchange import grid_exists, load_grid

    d = Path(directory)
    if not grid_exists(d):
        raise UsageError(f"no grid found in {d}")
    return load_grid(d)


def cmd_version(args) -> int:
    print(f"lactbench {__version__}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lactbench",
        description="Blood-lactate forecasting benchmark: synthetic cohorts, ingestion, imputation and models.",
        epilog="Environment: LACTBENCH_OUT sets the output root when --out is omitted; "
        "LACTBENCH_JOBS sets the default for experiment --jobs.",
    )
    p.add_argument("--log-json", action="store_true", help="log to stderr as JSON lines")
    p.add_argument("--log-level", default="INFO", help="logging level (default INFO)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--config", required=True, help="cohort config JSON (optionally with a missingness block)")
    s.add_argument("--missingness", help="missingness spec JSON (overrides the block in --config)")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="build a grid from source-table CSVs")
    s.add_argument("--data", required=True, help="directory holding the source tables")
    s.add_argument("--schema", help="schema mapping JSON (default: shipped eICU mapping)")
    s.add_argument("--cohort", help="cohort criteria JSON (default: shipped criteria)")
    s.add_argument("--features", help="feature dictionary JSON (default: shipped dictionary)")
    s.add_argument("--bin-width", type=int, default=120, help="bin width in minutes (default 120)")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("experiment", help="run the cross-validated imputer x model grid")
    s.add_argument("--config", required=True, help="experiment config JSON")
    s.add_argument("--imputers", help="comma-separated subset of imputers")
    s.add_argument("--models", help="comma-separated subset of models")
    s.add_argument("--jobs", type=int, help="parallel worker processes (default LACTBENCH_JOBS or 1)")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="render result CSVs as Markdown plus plot data")
    s.add_argument("--results", required=True, help="experiment output directory")
    s.add_argument("--out", help="where to write the report (default: the results directory)")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("impute", help="fit an imputer or apply a fitted one")
    isub = s.add_subparsers(dest="impute_command", required=True)
    f = isub.add_parser("fit", help="fit on a grid and save the state")
    f.add_argument("--method", required=True)
    f.add_argument("--params", help="JSON object of method parameters")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--grid", required=True, help="directory holding the training grid")
    f.add_argument("--state", required=True, help="state file to write")
    f.set_defaults(func=cmd_impute_fit)
    t = isub.add_parser("transform", help="fill a grid with a saved imputer")
    t.add_argument("--state", required=True)
    t.add_argument("--grid", required=True)
    t.add_argument("--out", help="output directory")
    t.set_defaults(func=cmd_impute_transform)

    s = sub.add_parser("version", help="print the package version")
    s.set_defaults(func=cmd_version)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    _setup_logging(args.log_level, args.log_json)
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure
        log.error("%s: %s", type(exc).__name__, exc)
        log.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
