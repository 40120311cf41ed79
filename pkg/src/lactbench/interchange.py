"""AlignedGrid on-disk format: metadata JSON plus wide CSV files.

Layout of a grid directory::

    <name>.json          stay descriptors, feature dictionary, bin width
    <name>.csv           stay_id, bin_index, <feature>..., <feature>__mask...
    <name>.truth.csv     optional ground-truth sidecar (same columns, no masks)
    <name>.provenance.csv  optional pre-imputation mask (same columns as masks)

Floats are written with 17 significant digits so that reading them back is
bit-exact; missing entries are empty cells.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import pandas as pd

from .datamodel import AlignedGrid, FeatureTable, StayInfo

FORMAT_VERSION = 1
MASK_SUFFIX = "__mask"


def _fmt_column(col: np.ndarray) -> np.ndarray:
    out = np.char.mod("%.17g", col).astype(object)
    out[np.isnan(col)] = ""
    return out


def _write_wide(path: Path, grid: AlignedGrid, blocks: list[tuple[list[str], np.ndarray, bool]]) -> None:
    stay_col = np.repeat(np.array(grid.stay_ids, dtype=object), grid.lengths())
    bin_col = grid.row_bin_index().astype(str).astype(object)
    header = ["stay_id", "bin_index"]
    cols = [stay_col, bin_col]
    for names, arr, is_mask in blocks:
        header.extend(names)
        for j in range(arr.shape[1]):
            if is_mask:
                cols.append(np.where(arr[:, j], "1", "0").astype(object))
            else:
                cols.append(_fmt_column(arr[:, j]))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        if grid.n_rows:
            table = np.column_stack(cols)
            fh.writelines(",".join(row) + "\n" for row in table)


def save_grid(grid: AlignedGrid, directory, name: str = "grid", feature_table: FeatureTable | None = None) -> dict:
    """Write ``grid`` into ``directory``; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    specs = {} if feature_table is None else {d["name"]: d for d in feature_table.to_json()}
    feats = [specs.get(f, {"name": f}) for f in grid.features]
    meta = {
        "format_version": FORMAT_VERSION,
        "bin_width_minutes": grid.bin_width_minutes,
        "features": feats,
        "stays": [dict(s.to_json(), n_bins=int(n)) for s, n in zip(grid.stays, grid.lengths())],
        "has_truth": grid.truth is not None,
        "has_provenance": grid.provenance_mask is not None,
    }
    paths = {"metadata": directory / f"{name}.json", "values": directory / f"{name}.csv"}
    with open(paths["metadata"], "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    feats_ = list(grid.features)
    _write_wide(
        paths["values"],
        grid,
        [(feats_, grid.values, False), ([f + MASK_SUFFIX for f in feats_], grid.mask, True)],
    )
    if grid.truth is not None:
        paths["truth"] = directory / f"{name}.truth.csv"
        _write_wide(paths["truth"], grid, [(feats_, grid.truth, False)])
    if grid.provenance_mask is not None:
        paths["provenance"] = directory / f"{name}.provenance.csv"
        _write_wide(paths["provenance"], grid, [([f + MASK_SUFFIX for f in feats_], grid.provenance_mask, True)])
    return {k: str(v) for k, v in paths.items()}


def _read_wide(path: Path, n_rows: int) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"stay_id": str}, float_precision="round_trip", keep_default_na=False, na_values=[""])
    if len(df) != n_rows:
        raise ValueError(f"{path}: expected {n_rows} rows, found {len(df)}")
    return df


def load_grid(directory, name: str = "grid") -> tuple[AlignedGrid, FeatureTable | None]:
    """Read a grid written by :func:`save_grid`.

    Returns the grid and, when the metadata carries full feature specs, the
    feature dictionary.
    """
    directory = Path(directory)
    with open(directory / f"{name}.json") as fh:
        meta = json.load(fh)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported grid format version {meta.get('format_version')!r}")
    stays = [StayInfo.from_json(s) for s in meta["stays"]]
    lens = np.array([s["n_bins"] for s in meta["stays"]], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    features = [f["name"] for f in meta["features"]]
    n_rows = int(offsets[-1])
    df = _read_wide(directory / f"{name}.csv", n_rows)
    expected = ["stay_id", "bin_index"] + features + [f + MASK_SUFFIX for f in features]
    if list(df.columns) != expected:
        raise ValueError(f"{name}.csv: header does not match metadata")
    values = df[features].to_numpy(dtype=np.float64) if n_rows else np.empty((0, len(features)))
    mask = df[[f + MASK_SUFFIX for f in features]].to_numpy().astype(bool) if n_rows else np.empty((0, len(features)), bool)
    truth = prov = None
    if meta.get("has_truth"):
        tdf = _read_wide(directory / f"{name}.truth.csv", n_rows)
        truth = tdf[features].to_numpy(dtype=np.float64) if n_rows else np.empty((0, len(features)))
    if meta.get("has_provenance"):
        pdf = _read_wide(directory / f"{name}.provenance.csv", n_rows)
        cols = [f + MASK_SUFFIX for f in features]
        prov = pdf[cols].to_numpy().astype(bool) if n_rows else np.empty((0, len(features)), bool)
    grid = AlignedGrid(
        stays=stays,
        features=features,
        values=values,
        mask=mask,
        offsets=offsets,
        bin_width_minutes=int(meta["bin_width_minutes"]),
        truth=truth,
        provenance_mask=prov,
    )
    table = None
    if all("valid_min" in f for f in meta["features"]):
        table = FeatureTable.from_json(meta["features"])
    return grid, table


def grid_exists(directory, name: str = "grid") -> bool:
    return os.path.exists(Path(directory) / f"{name}.json")


__all__ = ["save_grid", "load_grid", "grid_exists"]
