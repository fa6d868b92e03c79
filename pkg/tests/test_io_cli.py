import csv
import io
import json

import jsonschema
import numpy as np
import pytest
from click.testing import CliRunner

from plmm_dml.cli import main
from plmm_dml.dml import DmlConfig, DmlFit, confidence_interval, dml_fit
from plmm_dml.exceptions import DataError
from plmm_dml.io import (
    CsvSchema,
    default_schema,
    fit_report,
    load_csv,
    read_csv_dataset,
    report_schema,
    save_csv,
    write_csv_dataset,
)
from plmm_dml.learners import LearnerSpec
from plmm_dml.simulate import SimScenario, gen_dataset

from conftest import make_rng

SCHEMA_1D = CsvSchema("g", "y", ("x",), ("w",), ("z",))
FIT_ARGS = ["--group-col", "group", "--y-col", "y", "--x-cols", "x1", "--w-cols", "w1,w2,w3",
            "--z-cols", "z1,z2,z3"]


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "sim.csv"
    ds = gen_dataset(SimScenario(n_groups=24), make_rng(31))
    save_csv(ds, path)
    return path, ds


def read(text, schema=SCHEMA_1D):
    return read_csv_dataset(io.StringIO(text), schema)


# -- CSV ---------------------------------------------------------------------------

def test_read_small_file():
    ds = read("g,y,x,w,z\na,1,2,3,1\nb,4,5,6,1\na,7,8,9,1\nb,1.5e0,-2,0.25,1\n")
    assert ds.group_ids == ["a", "b"]
    assert [g.n for g in ds.groups] == [2, 2]
    np.testing.assert_array_equal(ds.groups[0].y, [1.0, 7.0])
    np.testing.assert_array_equal(ds.groups[1].w[:, 0], [6.0, 0.25])


def test_read_quoted_and_extra_columns():
    ds = read('id,g,y,x,w,z\n1,"a,1",1,2,3,1\n2,"a,1",3,4,5,1\n3,b,1,2,3,1\n')
    assert ds.group_ids == ["a,1", "b"]


def test_schema_validation():
    with pytest.raises(DataError, match="overlap"):
        CsvSchema("g", "y", ("x",), ("x",), ("z",))
    with pytest.raises(DataError, match="at least one"):
        CsvSchema("g", "y", (), ("w",), ("z",))


@pytest.mark.parametrize("text, pattern", [
    ("g,y,x,w\na,1,2,3\nb,1,2,3\n", r"unknown column.*'z'"),
    ("g,y,x,w,z\na,1,2,3,1\nb,1,oops,3,1\n", r"line 3: non-numeric value 'oops' in column 'x'"),
    ("g,y,x,w,z\na,1,2,3,1\nb,1,2,3\n", r"line 3: expected 5 fields, found 4"),
    ("", r"empty file"),
    ("g,y,x,w,z\n", r"no data rows"),
    ("g,y,x,w,z\na,1,2,3,1\n", r"at least 2 groups"),
    ("g,y,x,w,z\na,1,2,nan,1\nb,1,2,3,1\n", r"non-finite value in w"),
])
def test_read_errors(text, pattern):
    with pytest.raises(DataError, match=pattern):
        read(text)


def test_round_trip_is_bit_exact(sim_csv):
    path, ds = sim_csv
    back = load_csv(path, default_schema(ds))
    assert back.group_ids == [str(g) for g in ds.group_ids]
    for a, b in zip(ds.groups, back.groups):
        for name in ("y", "x", "w", "z"):
            assert np.array_equal(getattr(a, name), getattr(b, name))


def test_round_trip_extreme_values():
    buf = io.StringIO()
    vals = [5e-324, 1.7976931348623157e308, -0.1, 1 / 3, 2.0**-1074 * 3]
    ds = read("g,y,x,w,z\n" + "".join(f"{i % 2},{v!r},{v!r},{v!r},1\n" for i, v in enumerate(vals)))
    write_csv_dataset(ds, buf, SCHEMA_1D)
    back = read(buf.getvalue())
    for a, b in zip(ds.groups, back.groups):
        assert np.array_equal(a.y, b.y)


# -- JSON report -------------------------------------------------------------------

def test_report_validates_against_schema(sim_csv):
    _, ds = sim_csv
    fit = dml_fit(ds, DmlConfig(repetitions=2, learner=LearnerSpec(rf_num_trees=10)))
    report = fit_report(fit, ds, ["x1"])
    jsonschema.Draft202012Validator.check_schema(report_schema())
    jsonschema.validate(report, report_schema())
    assert report["coefficients"][0]["estimate"] == fit.beta_hat[0]
    broken = dict(report, extra=1)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(broken, report_schema())


# -- CLI ----------------------------------------------------------------------------

def invoke(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def test_cli_fit_byte_identical(sim_csv):
    path, _ = sim_csv
    args = ["fit", "--csv", str(path), *FIT_ARGS, "--seed", "7", "--repetitions", "2",
            "--rf-trees", "20"]
    a, b = invoke(args), invoke(args)
    assert a.exit_code == 0 and a.output == b.output
    report = json.loads(a.output)
    jsonschema.validate(report, report_schema())
    assert report["seed"] == 7 and report["config"]["learner"]["rf_num_trees"] == 20


def test_cli_fit_matches_library_and_interval(sim_csv, tmp_path):
    path, ds = sim_csv
    out = tmp_path / "r.json"
    res = invoke(["fit", "--csv", str(path), *FIT_ARGS, "--seed", "3", "--repetitions", "2",
                  "--learner", "linear", "--alpha", "0.1", "--out", str(out)])
    assert res.exit_code == 0 and res.output == ""
    report = json.loads(out.read_text())
    fit = dml_fit(load_csv(path, default_schema(ds)),
                  DmlConfig(repetitions=2, learner=LearnerSpec(kind="linear"), alpha=0.1, seed=3))
    coef = report["coefficients"][0]
    assert coef["estimate"] == fit.beta_hat[0]
    cov = np.array(report["covariance"])
    se = np.sqrt(np.diag(cov))
    lo, hi = confidence_interval(DmlFit(np.array([coef["estimate"]]), cov, se, None, None, []), 0.1)
    assert (coef["ci_lower"], coef["ci_upper"]) == (lo[0], hi[0])


@pytest.mark.parametrize("flags", [["--k-folds", "1"], ["--repetitions", "0"],
                                   ["--alpha", "0"], ["--learner", "gbm"]])
def test_cli_usage_errors(sim_csv, flags):
    path, _ = sim_csv
    res = CliRunner().invoke(main, ["fit", "--csv", str(path), *FIT_ARGS, *flags])
    assert res.exit_code == 2


def test_cli_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("group,y,x1,w1,w2,w3,z1,z2\n0,1,1,1,1,1,1,1\n")
    res = CliRunner().invoke(main, ["fit", "--csv", str(bad), *FIT_ARGS])
    assert res.exit_code == 3
    err = json.loads(res.output)["error"]
    assert err["type"] == "DataError" and "z3" in err["message"] and err["exit_code"] == 3
    res = CliRunner().invoke(main, ["fit", "--csv", str(tmp_path / "none.csv"), *FIT_ARGS])
    assert res.exit_code == 3


def test_cli_numerical_error(tmp_path):
    # constant x: residualized X is exactly zero, GLS is singular
    rows = ["group,y,x1,w1,w2,w3,z1,z2,z3"]
    rng = make_rng(1)
    for g in range(6):
        for i in range(4):
            w = rng.normal(size=3)
            rows.append(",".join(map(repr, [g, float(rng.normal()), 1.0, *map(float, w),
                                            1.0, 0.0, 1.0])))
    path = tmp_path / "sing.csv"
    path.write_text("\n".join(rows) + "\n")
    res = CliRunner().invoke(main, ["fit", "--csv", str(path), *FIT_ARGS, "--learner", "linear",
                                    "--repetitions", "1"])
    assert res.exit_code == 4
    assert json.loads(res.output)["error"]["type"] == "SingularDesignError"


def test_cli_simulate_summary(tmp_path):
    out = tmp_path / "reps.csv"
    res = invoke(["simulate", "--n-groups", "30", "--replicates", "10", "--learner", "oracle",
                  "--repetitions", "1", "--seed", "4", "--out", str(out)])
    assert res.exit_code == 0
    summary = json.loads(res.output)
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    covered = [int(r["covered"]) for r in rows]
    assert summary["coverage"] == np.mean(covered)
    assert summary["coverage"] in {i / 10 for i in range(11)}
    for r in rows:
        lo, hi = float(r["ci_lo"]), float(r["ci_hi"])
        assert int(r["covered"]) == int(lo <= 0.5 <= hi)
    bias = [float(r["beta_hat"]) - 0.5 for r in rows]
    assert summary["median_bias"] == pytest.approx(np.median(bias), abs=1e-15)
    assert np.allclose(bias, [float(r["bias"]) for r in rows], atol=0)
    again = invoke(["simulate", "--n-groups", "30", "--replicates", "10", "--learner", "oracle",
                    "--repetitions", "1", "--seed", "4"])
    assert again.output == res.output


def test_cli_generate_round_trip(tmp_path):
    out = tmp_path / "gen.csv"
    assert invoke(["generate", "--n-groups", "12", "--seed", "5", "--out", str(out)]).exit_code == 0
    ds = gen_dataset(SimScenario(n_groups=12), np.random.Generator(np.random.Philox(5)))
    back = load_csv(out, default_schema(ds))
    assert all(np.array_equal(a.y, b.y) for a, b in zip(ds.groups, back.groups))
