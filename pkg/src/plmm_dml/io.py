"""CSV ingestion and JSON/CSV result serialization.

CSV files are UTF-8 with a header row and RFC-4180 quoting. Floats are
written with ``repr`` (shortest round-trip form) so a write/read cycle is
lossless.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .data import GroupedDataset, make_groups, validate_dataset
from .exceptions import DataError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CsvSchema:
    group_col: str
    y_col: str
    x_cols: tuple
    w_cols: tuple
    z_cols: tuple

    def __post_init__(self):
        for name in ("x_cols", "w_cols", "z_cols"):
            cols = tuple(getattr(self, name))
            if not cols:
                raise DataError(f"{name} must name at least one column")
            object.__setattr__(self, name, cols)
        every = [self.group_col, self.y_col, *self.x_cols, *self.w_cols, *self.z_cols]
        dup = sorted({c for c in every if every.count(c) > 1})
        if dup:
            raise DataError(f"column sets overlap: {dup}")

    @property
    def columns(self) -> list[str]:
        return [self.group_col, self.y_col, *self.x_cols, *self.w_cols, *self.z_cols]


def _parse_float(cell, line, col):
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"line {line}: non-numeric value {cell!r} in column {col!r}") from None


def read_csv_dataset(stream, schema: CsvSchema) -> GroupedDataset:
    reader = csv.reader(stream, strict=True)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("line 1: empty file, expected a header row") from None
    except csv.Error as exc:
        raise DataError(f"line {reader.line_num}: {exc}") from None
    missing = [c for c in schema.columns if c not in header]
    if missing:
        raise DataError(f"unknown column(s) {missing}; header has {header}")
    pos = {c: header.index(c) for c in schema.columns}
    numeric = [c for c in schema.columns if c != schema.group_col]
    ids, rows = [], []
    try:
        for record in reader:
            line = reader.line_num
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(
                    f"line {line}: expected {len(header)} fields, found {len(record)}"
                )
            ids.append(record[pos[schema.group_col]])
            rows.append([_parse_float(record[pos[c]], line, c) for c in numeric])
    except csv.Error as exc:
        raise DataError(f"line {reader.line_num}: {exc}") from None
    if not rows:
        raise DataError("no data rows")
    arr = np.array(rows, dtype=np.float64)
    d, v = len(schema.x_cols), len(schema.w_cols)
    y = arr[:, 0]
    x = arr[:, 1:1 + d]
    w = arr[:, 1 + d:1 + d + v]
    z = arr[:, 1 + d + v:]
    return validate_dataset(make_groups(ids, y, x, w, z))


def load_csv(path, schema: CsvSchema) -> GroupedDataset:
    """Read a grouped dataset; groups keep first-appearance order."""
    with open(path, newline="", encoding="utf-8") as fh:
        return read_csv_dataset(fh, schema)


def default_schema(dataset: GroupedDataset) -> CsvSchema:
    return CsvSchema(
        "group", "y",
        tuple(f"x{j + 1}" for j in range(dataset.d)),
        tuple(f"w{j + 1}" for j in range(dataset.v)),
        tuple(f"z{j + 1}" for j in range(dataset.q)),
    )


def write_csv_dataset(dataset: GroupedDataset, stream, schema: CsvSchema | None = None):
    dataset = validate_dataset(dataset)
    schema = schema or default_schema(dataset)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(schema.columns)
    for g in dataset.groups:
        for i in range(g.n):
            writer.writerow([g.group_id, repr(float(g.y[i]))]
                            + [repr(float(a)) for a in g.x[i]]
                            + [repr(float(a)) for a in g.w[i]]
                            + [repr(float(a)) for a in g.z[i]])


def save_csv(dataset: GroupedDataset, path, schema: CsvSchema | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_csv_dataset(dataset, fh, schema)


def write_rows_csv(rows, fields, stream):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([repr(row[f]) if isinstance(row[f], float) else row[f] for f in fields])


# -- JSON -------------------------------------------------------------------

def _mat(a):
    return np.asarray(a, dtype=np.float64).tolist()


def config_dict(config) -> dict:
    spec = config.learner
    return {
        "k_folds": config.k_folds,
        "repetitions": config.repetitions,
        "alpha": config.alpha,
        "seed": config.seed,
        "learner": {
            "kind": spec.kind,
            "rf_num_trees": spec.rf_num_trees,
            "rf_min_node_size": spec.rf_min_node_size,
            "rf_mtry": spec.rf_mtry,
            "rf_bootstrap": spec.rf_bootstrap,
        },
    }


def fit_report(fit, dataset: GroupedDataset, names=None) -> dict:
    """JSON-ready description of a :class:`~plmm_dml.dml.DmlFit`."""
    d = len(fit.beta_hat)
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(d)]
    coefficients = [
        {
            "name": names[j],
            "estimate": float(fit.beta_hat[j]),
            "std_error": float(fit.std_errors[j]),
            "ci_lower": float(fit.ci_lower[j]),
            "ci_upper": float(fit.ci_upper[j]),
        }
        for j in range(d)
    ]
    splits = []
    for s in fit.splits:
        folds = []
        for k, f in enumerate(s.fold_fits):
            folds.append({
                "fold": k,
                "n_groups": len(s.partition.fold(k)) if s.partition is not None else None,
                "n_obs": f.n_total,
                "beta": _mat(f.theta.beta),
                "sigma2": f.theta.sigma2,
                "sigma_mat": _mat(f.theta.sigma_mat),
                "loglik": f.loglik,
                "converged": bool(f.converged),
                "iterations": int(f.iterations),
            })
        splits.append({
            "repetition": s.repetition,
            "beta": _mat(s.beta_s),
            "covariance": _mat(s.cov_s),
            "sigma2": s.sigma2_s,
            "sigma_mat": _mat(s.sigma_mat_s),
            "folds": folds,
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "coefficients": coefficients,
        "covariance": _mat(fit.cov_hat),
        "alpha": fit.config.alpha,
        "variance_components": {"sigma2": fit.sigma2, "sigma_mat": _mat(fit.sigma_mat)},
        "splits": splits,
        "failed_repetitions": list(fit.failed_repetitions),
        "data": {
            "n_groups": len(dataset),
            "n_obs": dataset.n_total,
            "n_max": dataset.n_max,
            "d": dataset.d,
            "v": dataset.v,
            "q": dataset.q,
        },
        "config": config_dict(fit.config),
        "seed": fit.config.seed,
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def report_schema() -> dict:
    """The JSON schema that every fit report satisfies."""
    text = resources.files("plmm_dml").joinpath("report.schema.json").read_text("utf-8")
    return json.loads(text)

