"""Command-line interface.

Exit status: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Failures other than usage errors print ``{"error": {...}}`` on stdout.
"""
from __future__ import annotations

import functools
import json
import logging
import sys

import click
import numpy as np

from .dml import DmlConfig, dml_fit
from .exceptions import DataError, FoldError, LearnerError, NumericalError, PlmmError
from .io import CsvSchema, dumps, fit_report, load_csv, save_csv, write_rows_csv
from .learners import LearnerSpec
from .simulate import SCENARIOS, SimScenario, gen_dataset
from .study import REPLICATE_FIELDS, run_study

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4
_LEARNERS = {"rf": "random_forest", "linear": "linear"}


def _exit_code(exc):
    cause = exc.cause if isinstance(exc, FoldError) else exc
    if isinstance(cause, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(cause, (DataError, LearnerError)):
        return EXIT_DATA
    return EXIT_NUMERICAL


def _guarded(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except PlmmError as exc:
            code = _exit_code(exc)
            cause = exc.cause if isinstance(exc, FoldError) else exc
            err = {"type": type(cause).__name__, "message": str(exc), "exit_code": code}
            if isinstance(exc, FoldError):
                err["fold"] = exc.fold
            click.echo(json.dumps({"error": err}))
            sys.exit(code)
    return wrapper


def _columns(text):
    cols = tuple(c.strip() for c in text.split(",") if c.strip())
    if not cols:
        raise click.BadParameter("expected a comma-separated list of column names")
    return cols


def _dml_options(func):
    options = [
        click.option("--k-folds", type=click.IntRange(min=2), default=2, show_default=True,
                     help="Number of cross-fitting folds."),
        click.option("--repetitions", type=click.IntRange(min=1), default=10, show_default=True,
                     help="Number of independent sample splits."),
        click.option("--rf-trees", type=click.IntRange(min=1), default=500, show_default=True),
        click.option("--rf-min-node", type=click.IntRange(min=1), default=5, show_default=True),
        click.option("--rf-mtry", type=click.IntRange(min=1), default=None,
                     help="Features tried per split [default: max(1, v // 3)]."),
        click.option("--alpha", type=click.FloatRange(0, 1, min_open=True), default=0.05,
                     show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
    ]
    for opt in reversed(options):
        func = opt(func)
    return func


def _config(learner, k_folds, repetitions, rf_trees, rf_min_node, rf_mtry, alpha, seed):
    spec_kind = _LEARNERS.get(learner, learner)
    spec = LearnerSpec(kind=spec_kind, rf_num_trees=rf_trees, rf_min_node_size=rf_min_node,
                       rf_mtry=rf_mtry) if spec_kind != "oracle" else None
    return DmlConfig(k_folds=k_folds, repetitions=repetitions,
                     learner=spec or LearnerSpec(kind="linear"), alpha=alpha, seed=seed)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Double machine learning for partially linear mixed-effects models."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command()
@click.option("--csv", "csv_path", required=True, type=click.Path(dir_okay=False),
              help="Input CSV with a header row.")
@click.option("--group-col", required=True)
@click.option("--y-col", required=True)
@click.option("--x-cols", required=True, help="Comma-separated linear covariates.")
@click.option("--w-cols", required=True, help="Comma-separated nonparametric covariates.")
@click.option("--z-cols", required=True, help="Comma-separated random-effects design columns.")
@click.option("--learner", type=click.Choice(["rf", "linear"]), default="rf", show_default=True)
@_dml_options
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the JSON report here instead of stdout.")
@_guarded
def fit(csv_path, group_col, y_col, x_cols, w_cols, z_cols, learner, k_folds, repetitions,
        rf_trees, rf_min_node, rf_mtry, alpha, seed, out):
    """Estimate the fixed-effects coefficients of a grouped CSV dataset."""
    schema = CsvSchema(group_col, y_col, _columns(x_cols), _columns(w_cols), _columns(z_cols))
    try:
        dataset = load_csv(csv_path, schema)
    except OSError as exc:
        raise DataError(f"cannot read {csv_path}: {exc}") from None
    config = _config(learner, k_folds, repetitions, rf_trees, rf_min_node, rf_mtry, alpha, seed)
    result = dml_fit(dataset, config)
    text = dumps(fit_report(result, dataset, schema.x_cols))
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--scenario", type=click.Choice(SCENARIOS), default="nonsmooth_balanced",
              show_default=True)
@click.option("--n-groups", type=click.IntRange(min=2), default=100, show_default=True)
@click.option("--replicates", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--learner", type=click.Choice(["rf", "linear", "oracle"]), default="rf",
              show_default=True)
@_dml_options
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write per-replicate results as CSV here.")
@_guarded
def simulate(scenario, n_groups, replicates, learner, k_folds, repetitions, rf_trees,
             rf_min_node, rf_mtry, alpha, seed, out):
    """Monte-Carlo coverage study; prints a JSON summary on stdout."""
    config = _config(learner, k_folds, repetitions, rf_trees, rf_min_node, rf_mtry, alpha, seed)
    sc = SimScenario(scenario, n_groups=n_groups)
    result = run_study(sc, config, replicates, seed=seed, oracle=learner == "oracle")
    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            write_rows_csv(result.rows, REPLICATE_FIELDS, fh)
    summary = {
        "scenario": scenario,
        "n_groups": n_groups,
        "beta0": sc.beta0,
        "learner": learner,
        **result.summary,
        "failures": result.failures,
        "config": {"k_folds": k_folds, "repetitions": repetitions, "alpha": alpha,
                   "rf_trees": rf_trees, "rf_min_node": rf_min_node, "rf_mtry": rf_mtry},
        "seed": seed,
    }
    click.echo(dumps(summary), nl=False)


@main.command()
@click.option("--scenario", type=click.Choice(SCENARIOS), default="nonsmooth_balanced",
              show_default=True)
@click.option("--n-groups", type=click.IntRange(min=2), default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guarded
def generate(scenario, n_groups, seed, out):
    """Write one simulated dataset as CSV (columns group, y, x1, w1..w3, z1..z3)."""
    rng = np.random.Generator(np.random.Philox(seed))
    save_csv(gen_dataset(SimScenario(scenario, n_groups=n_groups), rng), out)


if __name__ == "__main__":
    main()
